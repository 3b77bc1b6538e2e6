//! Coverage polynomials `alpha_q(P)` and the quantities derived from them.
//!
//! `alpha_q(P)` sums, over all length-`q` sequences of edges `c_1..c_q`, the
//! product of `p_{c_i} / |c_1 ∪ .. ∪ c_i|`. Under cancel-on-completion
//! redundancy `P{Q = q} = P{Q = 0} * alpha_q(P) * (N lambda / mu)^q`, so the
//! series fixes the whole queue-length law and, as `lambda -> 0`, the
//! tail ratios between two graphs.
//!
//! The DP groups sequences by the server set they cover: layer `i` maps each
//! reachable union to the accumulated weight of all length-`i` prefixes with
//! that union.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact::{ratio_to_f64, Arithmetic, Scalar};
use crate::model::{
    build_complete_uniform, build_ring, stability, EdgeWeightedGraph, SystemParams,
};

/// Largest server count for the coverage DP (state space `2^N`).
pub const MAX_DP_SERVERS: usize = 24;
/// Largest server count for which rational arithmetic is accepted.
pub const MAX_RATIONAL_SERVERS: usize = 16;
/// Enumeration budget of [`alpha_bruteforce`].
pub const BRUTEFORCE_BUDGET: u64 = 10_000_000;
/// Largest `q` for the partition expansion in [`classical_pod_pmf`].
pub const MAX_POD_QMAX: usize = 30;

/// Weights of all length-`index` edge sequences, keyed by covered server set.
#[derive(Debug, Clone)]
pub struct CoverageLayer<T> {
    pub index: usize,
    pub weights: BTreeMap<u64, T>,
}

impl<T: Scalar> CoverageLayer<T> {
    pub fn empty() -> Self {
        let mut weights = BTreeMap::new();
        weights.insert(0, T::one());
        Self { index: 0, weights }
    }

    /// Appends one more edge to every sequence. Each edge `e` contributes the
    /// factor `scale * w_e / |S ∪ e|`.
    pub fn advance(&self, masks: &[u64], weights: &[T], scale: &T) -> Self {
        let mut next: BTreeMap<u64, T> = BTreeMap::new();
        for (&set, w) in &self.weights {
            for (&m, p) in masks.iter().zip(weights) {
                let union = set | m;
                let add =
                    w.clone() * scale.clone() * p.clone() / T::from_u64(union.count_ones() as u64);
                match next.get_mut(&union) {
                    Some(acc) => *acc = acc.clone() + add,
                    None => {
                        next.insert(union, add);
                    }
                }
            }
        }
        Self {
            index: self.index + 1,
            weights: next,
        }
    }

    pub fn total(&self) -> T {
        self.weights
            .values()
            .fold(T::zero(), |acc, w| acc + w.clone())
    }
}

/// `alpha_1..alpha_qmax` for raw edge masks and weights (weights need not sum
/// to one; `alpha_q` is a homogeneous polynomial of degree `q` in them).
pub fn alpha_series<T: Scalar>(masks: &[u64], weights: &[T], qmax: usize) -> Vec<T> {
    let one = T::one();
    let mut layer = CoverageLayer::empty();
    let mut out = Vec::with_capacity(qmax);
    for _ in 0..qmax {
        layer = layer.advance(masks, weights, &one);
        out.push(layer.total());
    }
    out
}

fn graph_masks(graph: &EdgeWeightedGraph) -> Vec<u64> {
    (0..graph.len()).map(|k| graph.edge_mask(k)).collect()
}

/// Coverage-polynomial values of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTable {
    pub n_servers: usize,
    pub n_edges: usize,
    pub qmax: usize,
    /// The arithmetic actually used (never `Auto`).
    pub arithmetic: Arithmetic,
    /// `alpha_1..alpha_qmax`.
    pub values: Vec<f64>,
    #[serde(skip)]
    pub exact: Option<Vec<BigRational>>,
}

impl AlphaTable {
    /// `alpha_q` with `alpha_0 = 1`.
    pub fn get(&self, q: usize) -> f64 {
        if q == 0 {
            1.0
        } else {
            self.values[q - 1]
        }
    }

    pub fn get_exact(&self, q: usize) -> Option<BigRational> {
        if q == 0 {
            return Some(<BigRational as One>::one());
        }
        self.exact.as_ref().map(|v| v[q - 1].clone())
    }
}

fn resolve_arithmetic(
    graph: &EdgeWeightedGraph,
    qmax: usize,
    mode: Arithmetic,
) -> Result<Arithmetic> {
    match mode {
        Arithmetic::Auto => {
            if graph.exact_weights().is_some() && graph.n_servers() <= 8 && qmax <= 16 {
                Ok(Arithmetic::Rational)
            } else {
                Ok(Arithmetic::Double)
            }
        }
        Arithmetic::Rational => {
            if graph.exact_weights().is_none() {
                Err(invalid(
                    "rational arithmetic requested but the graph has no exact weights",
                ))
            } else if graph.n_servers() > MAX_RATIONAL_SERVERS {
                Err(Error::Size(format!(
                    "rational arithmetic is limited to {MAX_RATIONAL_SERVERS} servers"
                )))
            } else {
                Ok(Arithmetic::Rational)
            }
        }
        Arithmetic::Double => Ok(Arithmetic::Double),
    }
}

fn check_dp_size(graph: &EdgeWeightedGraph) -> Result<()> {
    if graph.n_servers() > MAX_DP_SERVERS {
        return Err(Error::Size(format!(
            "coverage DP supports at most {MAX_DP_SERVERS} servers, got {}",
            graph.n_servers()
        )));
    }
    Ok(())
}

/// `alpha_1..alpha_qmax` by the layered coverage DP, cost `O(qmax 2^N |E|)`.
pub fn alpha_dp(graph: &EdgeWeightedGraph, qmax: usize, mode: Arithmetic) -> Result<AlphaTable> {
    if qmax == 0 {
        return Err(invalid("qmax must be at least 1"));
    }
    check_dp_size(graph)?;
    let arithmetic = resolve_arithmetic(graph, qmax, mode)?;
    let masks = graph_masks(graph);
    let (values, exact) = match arithmetic {
        Arithmetic::Rational => {
            let weights = graph
                .exact_weights()
                .expect("checked by resolve_arithmetic");
            let exact = alpha_series(&masks, weights, qmax);
            (exact.iter().map(ratio_to_f64).collect(), Some(exact))
        }
        _ => (alpha_series(&masks, &graph.weights(), qmax), None),
    };
    Ok(AlphaTable {
        n_servers: graph.n_servers(),
        n_edges: graph.len(),
        qmax,
        arithmetic,
        values,
        exact,
    })
}

fn bruteforce<T: Scalar>(masks: &[u64], weights: &[T], q: usize) -> T {
    // Depth-first walk over all |E|^q sequences.
    fn walk<T: Scalar>(masks: &[u64], weights: &[T], left: usize, union: u64, acc: &T) -> T {
        if left == 0 {
            return acc.clone();
        }
        let mut total = T::zero();
        for (&m, p) in masks.iter().zip(weights) {
            let u = union | m;
            let term = acc.clone() * p.clone() / T::from_u64(u.count_ones() as u64);
            total = total + walk(masks, weights, left - 1, u, &term);
        }
        total
    }
    walk(masks, weights, q, 0, &T::one())
}

fn check_budget(graph: &EdgeWeightedGraph, q: usize) -> Result<()> {
    if q == 0 {
        return Err(invalid("q must be at least 1"));
    }
    let count = (graph.len() as f64).powi(q as i32);
    if count > BRUTEFORCE_BUDGET as f64 {
        return Err(Error::Size(format!(
            "|E|^q = {}^{q} exceeds the enumeration budget of {BRUTEFORCE_BUDGET}",
            graph.len()
        )));
    }
    if graph.n_servers() > 64 {
        return Err(Error::Size(
            "brute force supports at most 64 servers".into(),
        ));
    }
    Ok(())
}

/// `alpha_q` by literal enumeration of all `|E|^q` edge sequences.
pub fn alpha_bruteforce(graph: &EdgeWeightedGraph, q: usize) -> Result<f64> {
    check_budget(graph, q)?;
    Ok(bruteforce(&graph_masks(graph), &graph.weights(), q))
}

/// Exact-rational variant of [`alpha_bruteforce`].
pub fn alpha_bruteforce_exact(graph: &EdgeWeightedGraph, q: usize) -> Result<BigRational> {
    check_budget(graph, q)?;
    let weights = graph
        .exact_weights()
        .ok_or_else(|| invalid("graph has no exact weights"))?;
    Ok(bruteforce(&graph_masks(graph), weights, q))
}

fn same_n(a: &EdgeWeightedGraph, b: &EdgeWeightedGraph) -> Result<()> {
    if a.n_servers() != b.n_servers() {
        return Err(invalid(format!(
            "graphs have different server counts ({} vs {})",
            a.n_servers(),
            b.n_servers()
        )));
    }
    Ok(())
}

/// Joint arithmetic for a pair of graphs: rational only if both allow it.
fn pair_tables(
    a: &EdgeWeightedGraph,
    b: &EdgeWeightedGraph,
    qmax: usize,
    mode: Arithmetic,
) -> Result<(AlphaTable, AlphaTable)> {
    let mode = match mode {
        Arithmetic::Auto => {
            let ra = resolve_arithmetic(a, qmax, Arithmetic::Auto)?;
            let rb = resolve_arithmetic(b, qmax, Arithmetic::Auto)?;
            if ra == Arithmetic::Rational && rb == Arithmetic::Rational {
                Arithmetic::Rational
            } else {
                Arithmetic::Double
            }
        }
        other => other,
    };
    Ok((alpha_dp(a, qmax, mode)?, alpha_dp(b, qmax, mode)?))
}

/// `alpha_q(A) / alpha_q(B)`: the limit of `P{Q(A) >= q} / P{Q(B) >= q}` as
/// the arrival rate vanishes.
pub fn light_traffic_ratio(
    a: &EdgeWeightedGraph,
    b: &EdgeWeightedGraph,
    q: usize,
    mode: Arithmetic,
) -> Result<f64> {
    same_n(a, b)?;
    if q == 0 {
        return Err(invalid("q must be at least 1"));
    }
    let (ta, tb) = pair_tables(a, b, q, mode)?;
    match (ta.get_exact(q), tb.get_exact(q)) {
        (Some(x), Some(y)) => Ok(ratio_to_f64(&(x / y))),
        _ => Ok(ta.get(q) / tb.get(q)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub qmax: usize,
    pub holds: bool,
    pub first_violation: Option<usize>,
    /// `alpha_{q-1} / alpha_q` for `q = 1..=qmax` (index `q - 1`).
    pub ratios_a: Vec<f64>,
    pub ratios_b: Vec<f64>,
}

/// Checks `alpha_{q-1}(A)/alpha_q(A) >= alpha_{q-1}(B)/alpha_q(B)` for
/// `2 <= q <= qmax`. Holding for every `q` makes `Q(A)` stochastically
/// smaller than `Q(B)` at every load; a finite check is evidence only.
pub fn bd_dominance_check(
    a: &EdgeWeightedGraph,
    b: &EdgeWeightedGraph,
    qmax: usize,
    mode: Arithmetic,
) -> Result<DominanceReport> {
    same_n(a, b)?;
    if qmax < 2 {
        return Err(invalid("qmax must be at least 2"));
    }
    let (ta, tb) = pair_tables(a, b, qmax, mode)?;
    let ratio = |t: &AlphaTable, q: usize| t.get(q - 1) / t.get(q);
    let ratios_a: Vec<f64> = (1..=qmax).map(|q| ratio(&ta, q)).collect();
    let ratios_b: Vec<f64> = (1..=qmax).map(|q| ratio(&tb, q)).collect();
    let exact = ta.exact.is_some() && tb.exact.is_some();
    let first_violation = (2..=qmax).find(|&q| {
        if exact {
            // a_{q-1} b_q >= b_{q-1} a_q, all positive.
            let lhs = ta.get_exact(q - 1).unwrap() * tb.get_exact(q).unwrap();
            let rhs = tb.get_exact(q - 1).unwrap() * ta.get_exact(q).unwrap();
            lhs < rhs
        } else {
            let (ra, rb) = (ratios_a[q - 1], ratios_b[q - 1]);
            ra < rb - 1e-12 * rb.abs()
        }
    });
    Ok(DominanceReport {
        qmax,
        holds: first_violation.is_none(),
        first_violation,
        ratios_a,
        ratios_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n: usize,
    pub q: usize,
    pub trials: usize,
    pub step: f64,
    pub uniform_alpha: f64,
    /// `alpha_q(perturbed) - alpha_q(uniform)`, two entries (`+d`, `-d`) per trial.
    pub differences: Vec<f64>,
    pub min_difference: f64,
    /// Trials whose perturbation was shortened to stay inside the simplex.
    pub rescaled: usize,
    /// Norm of the finite-difference gradient at uniform, projected onto the
    /// tangent space `sum d_e = 0`.
    pub projected_gradient_norm: f64,
}

/// Random-direction probe of whether uniform weights minimise `alpha_q` on the
/// complete graph.
pub fn uniform_minimality_probe(
    n: usize,
    q: usize,
    trials: usize,
    step: f64,
    seed: u64,
) -> Result<ProbeReport> {
    if !(2..=10).contains(&n) {
        return Err(invalid(format!("probe supports 2 <= n <= 10, got {n}")));
    }
    if q == 0 || trials == 0 {
        return Err(invalid("q and trials must be positive"));
    }
    if !(step.is_finite() && step >= 0.0) {
        return Err(invalid(format!("step must be non-negative, got {step}")));
    }
    let graph = build_complete_uniform(n)?;
    let masks = graph_masks(&graph);
    let m = masks.len();
    let uniform = vec![1.0 / m as f64; m];
    let eval = |w: &[f64]| alpha_series(&masks, w, q)[q - 1];
    let base = eval(&uniform);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut differences = Vec::with_capacity(2 * trials);
    let mut rescaled = 0;
    for _ in 0..trials {
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = z.iter().sum::<f64>() / m as f64;
        let mut d: Vec<f64> = z.iter().map(|x| x - mean).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            d.iter_mut().for_each(|x| *x /= norm);
        }
        let mut shortened = false;
        for sign in [1.0, -1.0] {
            // Largest t <= 1 keeping u + sign * t * step * d non-negative.
            let mut t: f64 = 1.0;
            for (u, di) in uniform.iter().zip(&d) {
                let delta = sign * step * di;
                if delta < 0.0 && u + delta < 0.0 {
                    t = t.min(u / -delta);
                }
            }
            shortened |= t < 1.0;
            let w: Vec<f64> = uniform
                .iter()
                .zip(&d)
                .map(|(u, di)| u + sign * t * step * di)
                .collect();
            differences.push(eval(&w) - base);
        }
        if shortened {
            rescaled += 1;
        }
    }

    let h = 1e-6;
    let grad: Vec<f64> = (0..m)
        .map(|e| {
            let mut up = uniform.clone();
            let mut down = uniform.clone();
            up[e] += h;
            down[e] -= h;
            (eval(&up) - eval(&down)) / (2.0 * h)
        })
        .collect();
    let gmean = grad.iter().sum::<f64>() / m as f64;
    let projected_gradient_norm = grad.iter().map(|g| (g - gmean).powi(2)).sum::<f64>().sqrt();

    let min_difference = differences.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ProbeReport {
        n,
        q,
        trials,
        step,
        uniform_alpha: base,
        differences,
        min_difference,
        rescaled,
        projected_gradient_norm,
    })
}

fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// `F_j(N, d)` for `j = 0..=N-d+1`: sums over all 0/1 vectors with `j` ones on
/// the positions `i = d..=N` of the product of `C(i-1, d-1)` over set positions.
pub fn pod_f_coefficients(n: usize, d: usize) -> Result<Vec<BigInt>> {
    if d < 2 || d > n {
        return Err(invalid(format!("need 2 <= d <= n, got n={n}, d={d}")));
    }
    let m = n - d + 1;
    if m > 24 {
        return Err(Error::Size(format!(
            "N - d + 1 = {m} positions exceed the subset limit of 24"
        )));
    }
    let values: Vec<BigInt> = (d..=n)
        .map(|i| binomial(i as u64 - 1, d as u64 - 1))
        .collect();
    let mut f = vec![BigInt::zero(); m + 1];
    for subset in 0u32..(1u32 << m) {
        let prod = (0..m)
            .filter(|k| subset >> k & 1 == 1)
            .fold(BigInt::one(), |acc, k| acc * &values[k]);
        f[subset.count_ones() as usize] += prod;
    }
    Ok(f)
}

/// Multiplicity vectors `n` with `1 n_1 + 2 n_2 + .. + q n_q = q`, parts
/// capped at `max_part`.
fn partitions(q: usize, max_part: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, part: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        if part == 0 {
            return;
        }
        for count in (0..=rest / part).rev() {
            cur[part - 1] = count;
            rec(rest - count * part, part - 1, cur, out);
        }
        cur[part - 1] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0; q.max(1)];
    rec(q, q.min(max_part), &mut cur, &mut out);
    out
}

/// `sum over R(q)` of `(-1)^{|n|+q} |n|! prod F_j^{n_j} / n_j!`.
pub fn pod_partition_sum(q: usize, f: &[BigInt]) -> BigInt {
    if q == 0 {
        return BigInt::one();
    }
    let max_part = f.len() - 1;
    let mut total = BigInt::zero();
    for n in partitions(q, max_part) {
        let size: usize = n.iter().sum();
        let mut term = factorial(size as u64);
        for (j, &nj) in n.iter().enumerate() {
            if nj > 0 {
                term *= num_traits::pow(f[j + 1].clone(), nj);
                term /= factorial(nj as u64);
            }
        }
        if (size + q) % 2 == 1 {
            term = -term;
        }
        total += term;
    }
    total
}

/// Queue-length law of the classical (uniform) power-of-`d` redundancy system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodPmf {
    pub n: usize,
    pub d: usize,
    pub rho: f64,
    /// `P{Q = q} / P{Q = 0}` for `q = 0..=qmax`.
    pub ratios: Vec<f64>,
    /// Normalised `P{Q = q}` for `q = 0..=qmax`.
    pub pmf: Vec<f64>,
    /// Number of series terms summed for the normalisation.
    pub terms_summed: usize,
}

/// Classical power-of-`d` law from the partition expansion over `R(q)` with
/// coefficients `F_j(N, d)`. The external normalising constant cancels in the
/// ratio to `P{Q = 0}`; the law is then normalised numerically.
pub fn classical_pod_pmf(n: usize, d: usize, rho: f64, qmax: usize) -> Result<PodPmf> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    if qmax > MAX_POD_QMAX {
        return Err(Error::Size(format!(
            "qmax {qmax} exceeds the partition guard of {MAX_POD_QMAX}"
        )));
    }
    let f = pod_f_coefficients(n, d)?;
    let base = binomial(n as u64 - 1, d as u64 - 1);
    let rho_exact = crate::exact::rational_from_decimal(rho).expect("finite rho");
    let mut h: Vec<BigInt> = (0..=qmax).map(|q| pod_partition_sum(q, &f)).collect();
    let ratio_of = |q: usize, hq: &BigInt| -> f64 {
        let scaled = BigRational::new(hq.clone(), num_traits::pow(base.clone(), q));
        ratio_to_f64(&(scaled * num_traits::pow(rho_exact.clone(), q)))
    };
    let ratios: Vec<f64> = h
        .iter()
        .enumerate()
        .map(|(q, hq)| ratio_of(q, hq))
        .collect();

    // Tail: the same expansion obeys h_q = sum_j (-1)^{j-1} F_j h_{q-j}. Run
    // it in doubles on g_q = h_q / base^q, whose roots all lie in (0, 1].
    let m = f.len() - 1;
    let coeff: Vec<f64> = (1..=m)
        .map(|j| {
            let c = ratio_to_f64(&BigRational::new(
                f[j].clone(),
                num_traits::pow(base.clone(), j),
            ));
            if j % 2 == 1 {
                c
            } else {
                -c
            }
        })
        .collect();
    // Seed the double recurrence from the exact values (pad with more exact terms if short).
    while h.len() < m + 1 {
        let q = h.len();
        let next = (1..=m.min(q)).fold(BigInt::zero(), |acc, j| {
            let t = &f[j] * &h[q - j];
            if j % 2 == 1 {
                acc + t
            } else {
                acc - t
            }
        });
        h.push(next);
    }
    let mut g: Vec<f64> = h
        .iter()
        .enumerate()
        .map(|(q, hq)| {
            ratio_to_f64(&BigRational::new(
                hq.clone(),
                num_traits::pow(base.clone(), q),
            ))
        })
        .collect();
    let mut total: f64 = ratios.iter().sum();
    let mut q = qmax + 1;
    let mut rho_q = rho.powi(q as i32);
    let mut last;
    const MAX_TERMS: usize = 10_000_000;
    loop {
        let gq = if q < g.len() {
            g[q]
        } else {
            let v = (1..=m).map(|j| coeff[j - 1] * g[q - j]).sum::<f64>();
            g.push(v);
            v
        };
        let term = gq * rho_q;
        total += term;
        last = term;
        q += 1;
        rho_q *= rho;
        if term.abs() <= 1e-17 * total || q >= MAX_TERMS {
            break;
        }
    }
    // Geometric closure; successive terms shrink by rho asymptotically.
    total += last * rho / (1.0 - rho);
    let pmf = ratios.iter().map(|r| r / total).collect();
    Ok(PodPmf {
        n,
        d,
        rho,
        ratios,
        pmf,
        terms_summed: q,
    })
}

/// Complete homogeneous symmetric polynomial `h_q(values)`, by direct
/// expansion over multisets. Independent of the partition route.
pub fn complete_homogeneous(values: &[BigInt], q: usize) -> BigInt {
    // h_q(x_1..x_k) = sum_{a} x_k^a h_{q-a}(x_1..x_{k-1})
    let mut table = vec![BigInt::zero(); q + 1];
    table[0] = BigInt::one();
    for x in values {
        for deg in 1..=q {
            let prev = table[deg - 1].clone();
            table[deg] += prev * x;
        }
    }
    table[q].clone()
}

/// `P{Q = q}` for `q = 0..=qmax` under cancel-on-completion redundancy on an
/// arbitrary graph, from the coverage series normalised to convergence.
pub fn product_form_pmf(graph: &EdgeWeightedGraph, rho: f64, qmax: usize) -> Result<Vec<f64>> {
    if graph.n_servers() > 12 {
        return Err(Error::Size(
            "product-form series supports at most 12 servers".into(),
        ));
    }
    let params = SystemParams::from_load(graph.n_servers(), rho, 1.0)?;
    let report = stability(graph, &params)?;
    if !report.stable {
        return Err(Error::Unstable(format!(
            "rho = {rho} violates the subset stability condition"
        )));
    }
    if rho == 0.0 {
        let mut pmf = vec![0.0; qmax + 1];
        pmf[0] = 1.0;
        return Ok(pmf);
    }
    let masks = graph_masks(graph);
    let weights = graph.weights();
    let scale = graph.n_servers() as f64 * rho;
    let mut layer = CoverageLayer::<f64>::empty();
    let mut terms = vec![1.0];
    let mut total = 1.0;
    const MAX_LAYERS: usize = 200_000;
    loop {
        layer = layer.advance(&masks, &weights, &scale);
        let t = layer.total();
        total += t;
        terms.push(t);
        let q = terms.len() - 1;
        if q >= qmax && t <= 1e-17 * total {
            break;
        }
        if q >= MAX_LAYERS {
            return Err(Error::Size(format!(
                "series did not converge within {MAX_LAYERS} terms"
            )));
        }
    }
    let n = terms.len();
    if n >= 2 && terms[n - 2] > 0.0 {
        let r = terms[n - 1] / terms[n - 2];
        if r < 1.0 {
            total += terms[n - 1] * r / (1.0 - r);
        }
    }
    Ok(terms.iter().take(qmax + 1).map(|t| t / total).collect())
}

/// `E[busy servers | Q = q]` for `q = 0..=qmax` under cancel-on-completion,
/// from the coverage layers (busy servers are the union of queued types).
pub fn expected_busy_servers(graph: &EdgeWeightedGraph, qmax: usize) -> Result<Vec<f64>> {
    check_dp_size(graph)?;
    let masks = graph_masks(graph);
    let weights = graph.weights();
    let mut layer = CoverageLayer::<f64>::empty();
    let mut out = vec![0.0];
    for _ in 0..qmax {
        layer = layer.advance(&masks, &weights, &1.0);
        let total = layer.total();
        let busy: f64 = layer
            .weights
            .iter()
            .map(|(s, w)| w * s.count_ones() as f64)
            .sum();
        out.push(busy / total);
    }
    Ok(out)
}

/// One cell of the light-traffic ratio table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub epsilon: f64,
    pub n: usize,
    pub q: usize,
    pub value: f64,
}

/// Ring rows (`eps = 0.5, 0.7, 0.9`) of the table.
pub const TABLE1_EPSILONS: [f64; 3] = [0.5, 0.7, 0.9];
/// `(N, q)` columns of the table.
pub const TABLE1_COLUMNS: [(usize, usize); 7] =
    [(4, 2), (4, 4), (4, 10), (4, 16), (8, 2), (8, 4), (8, 10)];

/// `alpha_q(uniform complete) / alpha_q(ring(N, eps))` for every row and
/// column. `Auto` uses rationals for `N = 4` and doubles for `N = 8`.
pub fn table1(mode: Arithmetic) -> Result<Vec<Table1Cell>> {
    let mut cells = Vec::new();
    for eps in TABLE1_EPSILONS {
        for n in [4usize, 8] {
            let qmax = TABLE1_COLUMNS
                .iter()
                .filter(|c| c.0 == n)
                .map(|c| c.1)
                .max()
                .unwrap();
            let arithmetic = match mode {
                Arithmetic::Auto if n == 4 => Arithmetic::Rational,
                Arithmetic::Auto => Arithmetic::Double,
                other => other,
            };
            let uniform = alpha_dp(&build_complete_uniform(n)?, qmax, arithmetic)?;
            let ring = alpha_dp(&build_ring(n, eps)?, qmax, arithmetic)?;
            for &(cn, q) in TABLE1_COLUMNS.iter().filter(|c| c.0 == n) {
                let value = match (uniform.get_exact(q), ring.get_exact(q)) {
                    (Some(a), Some(b)) => ratio_to_f64(&(a / b)),
                    _ => uniform.get(q) / ring.get(q),
                };
                cells.push(Table1Cell {
                    epsilon: eps,
                    n: cn,
                    q,
                    value,
                });
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    fn frac(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn alpha_one_is_half() {
        for g in [
            build_complete_uniform(5).unwrap(),
            build_ring(6, 0.2).unwrap(),
        ] {
            let t = alpha_dp(&g, 1, Arithmetic::Rational).unwrap();
            assert_eq!(t.get_exact(1).unwrap(), frac(1, 2));
        }
    }

    #[test]
    fn known_second_coefficients() {
        let t = alpha_dp(&build_complete_uniform(4).unwrap(), 2, Arithmetic::Auto).unwrap();
        assert_eq!(t.arithmetic, Arithmetic::Rational);
        assert_eq!(t.get_exact(2).unwrap(), frac(25, 144));
        let t = alpha_dp(&build_ring(4, 0.5).unwrap(), 2, Arithmetic::Auto).unwrap();
        assert_eq!(t.get_exact(2).unwrap(), frac(17, 96));
        let t = alpha_dp(&build_ring(4, 0.9).unwrap(), 2, Arithmetic::Auto).unwrap();
        assert_eq!(t.get_exact(2).unwrap(), frac(147, 800));
        assert!((t.get(2) - 0.18375).abs() < 1e-15);
    }

    #[test]
    fn single_edge_is_power_of_half() {
        let g = EdgeWeightedGraph::new(2, &[(1, 2, 1.0)]).unwrap();
        for q in 1..=8 {
            let bf = alpha_bruteforce_exact(&g, q).unwrap();
            assert_eq!(bf, frac(1, 1 << q));
        }
    }

    #[test]
    fn dp_argument_errors() {
        let g = build_complete_uniform(4).unwrap();
        assert!(matches!(
            alpha_dp(&g, 0, Arithmetic::Auto),
            Err(Error::InvalidParameter(_))
        ));
        let big = build_ring(26, 0.5).unwrap();
        assert!(matches!(
            alpha_dp(&big, 2, Arithmetic::Double),
            Err(Error::Size(_))
        ));
        let k5 = build_complete_uniform(8).unwrap();
        assert!(matches!(alpha_bruteforce(&k5, 6), Err(Error::Size(_))));
    }

    #[test]
    fn auto_mode_falls_back_to_double() {
        let g = build_ring(10, 0.5).unwrap();
        assert_eq!(
            alpha_dp(&g, 3, Arithmetic::Auto).unwrap().arithmetic,
            Arithmetic::Double
        );
        let g = build_ring(4, 0.5).unwrap();
        assert_eq!(
            alpha_dp(&g, 17, Arithmetic::Auto).unwrap().arithmetic,
            Arithmetic::Double
        );
        let third = 1.0 / 3.0;
        let g = EdgeWeightedGraph::new(3, &[(1, 2, third), (2, 3, third), (1, 3, third)]).unwrap();
        assert!(alpha_dp(&g, 2, Arithmetic::Rational).is_err());
    }

    #[test]
    fn light_traffic_ratio_identity_and_mismatch() {
        let g = build_ring(6, 0.3).unwrap();
        assert_eq!(
            light_traffic_ratio(&g, &g, 5, Arithmetic::Auto).unwrap(),
            1.0
        );
        let h = build_complete_uniform(4).unwrap();
        assert!(light_traffic_ratio(&g, &h, 2, Arithmetic::Auto).is_err());
    }

    #[test]
    fn dominance_direction() {
        let k4 = build_complete_uniform(4).unwrap();
        let hom = build_ring(4, 0.5).unwrap();
        let het = build_ring(4, 0.9).unwrap();
        let r = bd_dominance_check(&k4, &hom, 16, Arithmetic::Auto).unwrap();
        assert!(r.holds);
        let r = bd_dominance_check(&het, &het, 8, Arithmetic::Auto).unwrap();
        assert!(r.holds);
        assert_eq!(r.ratios_a, r.ratios_b);
        let r = bd_dominance_check(&het, &k4, 4, Arithmetic::Auto).unwrap();
        assert!(!r.holds);
        assert_eq!(r.first_violation, Some(2));
    }

    #[test]
    fn partitions_are_counted() {
        // p(q) for q = 1..10
        let counts: Vec<usize> = (1..=10).map(|q| partitions(q, q).len()).collect();
        assert_eq!(counts, vec![1, 2, 3, 5, 7, 11, 15, 22, 30, 42]);
        assert_eq!(partitions(5, 2).len(), 3);
    }

    #[test]
    fn f_coefficients_are_elementary_symmetric() {
        // values C(1,1), C(2,1), C(3,1) = 1, 2, 3
        let f = pod_f_coefficients(4, 2).unwrap();
        let f: Vec<i64> = f.iter().map(|x| x.to_i64().unwrap()).collect();
        assert_eq!(f, vec![1, 6, 11, 6]);
    }

    #[test]
    fn partition_sum_matches_complete_homogeneous() {
        for (n, d) in [(4, 2), (6, 3), (7, 2), (5, 5)] {
            let f = pod_f_coefficients(n, d).unwrap();
            let values: Vec<BigInt> = (d..=n)
                .map(|i| binomial(i as u64 - 1, d as u64 - 1))
                .collect();
            for q in 0..=14 {
                assert_eq!(
                    pod_partition_sum(q, &f),
                    complete_homogeneous(&values, q),
                    "n={n} d={d} q={q}"
                );
            }
        }
    }

    #[test]
    fn pod_ratio_at_zero_is_one() {
        let p = classical_pod_pmf(6, 3, 0.4, 5).unwrap();
        assert_eq!(p.ratios[0], 1.0);
        assert!(classical_pod_pmf(4, 2, 0.5, 31).is_err());
        assert!(classical_pod_pmf(4, 5, 0.5, 3).is_err());
        assert!(classical_pod_pmf(4, 2, 1.0, 3).is_err());
    }

    #[test]
    fn expected_busy_single_job() {
        let g = build_complete_uniform(4).unwrap();
        let b = expected_busy_servers(&g, 3).unwrap();
        assert_eq!(b[0], 0.0);
        assert!((b[1] - 2.0).abs() < 1e-15);
        assert!(b[2] > 2.0 && b[3] > b[2] && b[3] < 4.0);
    }

    #[test]
    fn product_form_rejects_unstable() {
        let g = build_ring(4, 0.5).unwrap();
        assert!(matches!(
            product_form_pmf(&g, 1.0, 5),
            Err(Error::Unstable(_))
        ));
        let p = product_form_pmf(&g, 0.0, 3).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0, 0.0]);
    }
}
