#![allow(clippy::needless_range_loop)]

use redlab_core::alpha::expected_busy_servers;
use redlab_core::closed_forms::{
    coc_complete4_pmf, cos_complete4_pmf, cos_homring4_pmf, negbinom_pmf, QueueLaw,
};
use redlab_core::model::{build_complete_uniform, build_ring, EdgeWeightedGraph, SystemParams};
use redlab_core::sim::{compare_empirical, simulate, EmpiricalDistribution, Policy, SimConfig};

fn run(
    graph: EdgeWeightedGraph,
    rho: f64,
    policy: Policy,
    runs: usize,
    seed: u64,
) -> EmpiricalDistribution {
    let n = graph.n_servers();
    let mut cfg = SimConfig::new(graph, SystemParams::from_load(n, rho, 1.0).unwrap(), policy);
    cfg.n_runs = runs;
    cfg.n_events = 100_000;
    cfg.seed = seed;
    simulate(&cfg).unwrap()
}

/// Every `q <= qmax` within four standard errors plus a small floor.
fn assert_close(emp: &EmpiricalDistribution, law: &dyn QueueLaw, qmax: usize) {
    for q in 0..=qmax {
        let got = emp.mean_pmf.get(q).copied().unwrap_or(0.0);
        let want = law.pmf(q);
        let tol = 4.0 * emp.pmf_se.get(q).copied().unwrap_or(0.0) + 2e-3;
        assert!(
            (got - want).abs() <= tol,
            "q={q}: {got} vs {want} (tol {tol})"
        );
    }
}

#[test]
fn coc_complete_graph_matches_closed_form() {
    let emp = run(
        build_complete_uniform(4).unwrap(),
        0.8,
        Policy::RedundancyCoc,
        16,
        1,
    );
    assert_close(&emp, &coc_complete4_pmf(0.8).unwrap(), 8);
}

#[test]
fn cos_laws_match_closed_forms() {
    let emp = run(
        build_complete_uniform(4).unwrap(),
        0.7,
        Policy::RedundancyCos,
        16,
        2,
    );
    assert_close(&emp, &cos_complete4_pmf(0.7).unwrap(), 8);
    let emp = run(
        build_ring(4, 0.5).unwrap(),
        0.7,
        Policy::RedundancyCos,
        16,
        3,
    );
    assert_close(&emp, &cos_homring4_pmf(0.7).unwrap(), 8);
}

#[test]
fn disconnected_ring_is_negative_binomial() {
    let emp = run(
        build_ring(4, 1.0).unwrap(),
        0.6,
        Policy::RedundancyCoc,
        16,
        4,
    );
    for q in 0..=8 {
        let want = negbinom_pmf(0.6, q).unwrap();
        let tol = 4.0 * emp.pmf_se[q] + 2e-3;
        assert!(
            (emp.mean_pmf[q] - want).abs() <= tol,
            "q={q}: {} vs {want}",
            emp.mean_pmf[q]
        );
    }
}

#[test]
fn departures_track_busy_servers() {
    let graph = build_ring(4, 0.8).unwrap();
    let busy = expected_busy_servers(&graph, 6).unwrap();
    let emp = run(graph, 0.7, Policy::RedundancyCoc, 8, 5);
    for q in 1..=6 {
        let rate = emp.departure_rate(q).unwrap();
        assert!(
            (rate - busy[q]).abs() < 0.05 * busy[q],
            "q={q}: {rate} vs {}",
            busy[q]
        );
    }
}

#[test]
fn jiq_prefers_the_complete_graph() {
    let complete = run(build_complete_uniform(4).unwrap(), 0.8, Policy::Jiq, 10, 6);
    let ring = run(build_ring(4, 0.9).unwrap(), 0.8, Policy::Jiq, 10, 7);
    let d = compare_empirical(&complete, &ring, 15).unwrap();
    assert!(d.average() > 0.0, "{:?}", d.diff);
}

#[test]
fn idle_system_stays_empty() {
    let emp = run(
        build_ring(4, 0.5).unwrap(),
        0.0,
        Policy::RedundancyCos,
        3,
        0,
    );
    assert_eq!(emp.mean_pmf, vec![1.0]);
}

#[test]
fn same_seed_same_output() {
    for policy in [Policy::RedundancyCoc, Policy::RedundancyCos, Policy::Jiq] {
        let a = run(build_ring(6, 0.7).unwrap(), 0.75, policy, 4, 9);
        let b = run(build_ring(6, 0.7).unwrap(), 0.75, policy, 4, 9);
        assert_eq!(a.run_pmfs, b.run_pmfs);
        assert_eq!(a.run_times, b.run_times);
        let c = run(build_ring(6, 0.7).unwrap(), 0.75, policy, 4, 10);
        assert_ne!(a.run_pmfs, c.run_pmfs);
    }
}

#[test]
fn per_run_estimates_are_distributions() {
    let emp = run(
        build_ring(8, 0.3).unwrap(),
        0.85,
        Policy::RedundancyCoc,
        4,
        11,
    );
    for pmf in &emp.run_pmfs {
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(pmf.iter().all(|p| *p >= 0.0));
    }
    assert!(emp.mean_ccdf.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    assert!(emp.run_times.iter().all(|t| *t > 0.0));
}
