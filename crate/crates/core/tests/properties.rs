use proptest::prelude::*;
use redlab_core::alpha::{alpha_bruteforce_exact, alpha_dp, classical_pod_pmf};
use redlab_core::closed_forms::{coc_hetring4_pmf, QueueLaw};
use redlab_core::exact::{Arithmetic, BigInt, BigRational};
use redlab_core::model::{
    build_ring, check_stability, check_stability_by_servers, EdgeWeightedGraph, SystemParams,
};

/// Random graph on `n <= 5` servers with up to six edges and exact weights.
fn small_graph() -> impl Strategy<Value = EdgeWeightedGraph> {
    (2usize..=5)
        .prop_flat_map(|n| {
            let pairs: Vec<(u32, u32)> = (1..=n as u32)
                .flat_map(|i| (i + 1..=n as u32).map(move |j| (i, j)))
                .collect();
            let max = pairs.len().min(6);
            (
                Just(n),
                proptest::sample::subsequence(pairs, 1..=max),
                proptest::collection::vec(1u32..20, 6),
            )
        })
        .prop_map(|(n, pairs, w)| {
            let total: u32 = w.iter().take(pairs.len()).sum();
            let triples: Vec<_> = pairs
                .iter()
                .zip(&w)
                .map(|(&(i, j), &wi)| {
                    (
                        i,
                        j,
                        BigRational::new(BigInt::from(wi), BigInt::from(total)),
                    )
                })
                .collect();
            EdgeWeightedGraph::from_exact(n, &triples).unwrap()
        })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<u32>> {
    Just((1..=n as u32).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dp_equals_bruteforce(g in small_graph(), q in 1usize..=4) {
        let t = alpha_dp(&g, q, Arithmetic::Rational).unwrap();
        prop_assert_eq!(t.get_exact(q).unwrap(), alpha_bruteforce_exact(&g, q).unwrap());
    }

    #[test]
    fn first_coefficient_is_half(g in small_graph()) {
        let t = alpha_dp(&g, 1, Arithmetic::Rational).unwrap();
        prop_assert_eq!(t.get_exact(1).unwrap(), BigRational::new(1.into(), 2.into()));
    }

    #[test]
    fn alpha_ignores_server_labels((g, perm) in small_graph().prop_flat_map(|g| {
        let n = g.n_servers();
        (Just(g), permutation(n))
    })) {
        let h = g.relabel(&perm).unwrap();
        let a = alpha_dp(&g, 4, Arithmetic::Rational).unwrap();
        let b = alpha_dp(&h, 4, Arithmetic::Rational).unwrap();
        prop_assert_eq!(a.exact, b.exact);
    }

    #[test]
    fn ring_mirror_symmetry(half in 2usize..=4, eps in 0.01f64..0.99) {
        let n = 2 * half;
        let a = alpha_dp(&build_ring(n, eps).unwrap(), 6, Arithmetic::Double).unwrap();
        let b = alpha_dp(&build_ring(n, 1.0 - eps).unwrap(), 6, Arithmetic::Double).unwrap();
        for q in 1..=6 {
            prop_assert!((a.get(q) - b.get(q)).abs() <= 1e-12 * a.get(q));
        }
    }

    #[test]
    fn stability_is_monotone_in_load(g in small_graph(), lo in 0.0f64..2.0, extra in 0.0f64..1.0) {
        let n = g.n_servers();
        let hi = lo + extra;
        let at_hi = check_stability(&g, &SystemParams::new(n, hi, 1.0).unwrap()).unwrap();
        let at_lo = check_stability(&g, &SystemParams::new(n, lo, 1.0).unwrap()).unwrap();
        if at_hi.stable {
            prop_assert!(at_lo.stable);
        }
        prop_assert!(at_lo.slack >= at_hi.slack - 1e-12);
    }

    #[test]
    fn edge_and_server_scans_agree(g in small_graph(), lambda in 0.0f64..1.5) {
        let params = SystemParams::new(g.n_servers(), lambda, 1.0).unwrap();
        let a = check_stability(&g, &params).unwrap();
        let b = check_stability_by_servers(&g, &params).unwrap();
        prop_assert_eq!(a.stable, b.stable);
        prop_assert!((a.slack - b.slack).abs() < 1e-9, "{} vs {}", a.slack, b.slack);
    }

    #[test]
    fn ring_law_is_a_distribution(rho in 0.01f64..0.98, eps in 0.02f64..0.98) {
        prop_assume!((eps - 1.0 / 3.0).abs() > 1e-3 && (eps - 2.0 / 3.0).abs() > 1e-3);
        let d = coc_hetring4_pmf(rho, eps).unwrap();
        prop_assert!((d.total_mass() - 1.0).abs() < 1e-10);
        for q in 0..=100 {
            prop_assert!(d.pmf(q) >= -1e-12);
        }
        let m = coc_hetring4_pmf(rho, 1.0 - eps).unwrap();
        for q in 0..=20 {
            prop_assert!((d.pmf(q) - m.pmf(q)).abs() < 1e-10);
        }
    }

    #[test]
    fn classical_law_is_a_distribution(n in 3usize..=9, d_off in 0usize..3, rho in 0.05f64..0.95) {
        let d = (2 + d_off).min(n);
        let p = classical_pod_pmf(n, d, rho, 20).unwrap();
        prop_assert!(p.pmf.iter().all(|x| *x > 0.0));
        prop_assert!(p.pmf.iter().sum::<f64>() <= 1.0 + 1e-12);
        // at most as good as full pooling at P{Q = 0}
        prop_assert!(p.pmf[0] <= 1.0 - rho + 1e-12);
    }
}
