//! System parameters, edge-weighted compatibility graphs and the subset
//! stability test.
//!
//! Servers are numbered `1..=N`. An edge `{i, j}` with weight `p` means an
//! arriving job is of type `{i, j}` (replicated to, or dispatched among,
//! servers `i` and `j`) with probability `p`.

use std::collections::HashMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact::{ratio_to_f64, rational_from_decimal};

/// Absolute tolerance on the total edge weight of a double-precision graph.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Largest number of stored edges the literal subset scan accepts.
pub const MAX_SCAN_EDGES: usize = 30;

/// Largest server count the server-subset stability scan accepts.
pub const MAX_SCAN_SERVERS: usize = 24;
/// Relative slack below which a subset counts as saturated (boundary loads are unstable).
pub const STABILITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    n_servers: usize,
    arrival_rate_per_server: f64,
    service_speed: f64,
}

impl SystemParams {
    pub fn new(n_servers: usize, arrival_rate_per_server: f64, service_speed: f64) -> Result<Self> {
        if n_servers < 2 {
            return Err(invalid(format!(
                "n_servers must be at least 2, got {n_servers}"
            )));
        }
        if !(service_speed.is_finite() && service_speed > 0.0) {
            return Err(invalid(format!(
                "service_speed must be positive, got {service_speed}"
            )));
        }
        if !(arrival_rate_per_server.is_finite() && arrival_rate_per_server >= 0.0) {
            return Err(invalid(format!(
                "arrival_rate_per_server must be non-negative, got {arrival_rate_per_server}"
            )));
        }
        Ok(Self {
            n_servers,
            arrival_rate_per_server,
            service_speed,
        })
    }

    /// Parameters with per-server load `rho = lambda / mu`.
    pub fn from_load(n_servers: usize, rho: f64, service_speed: f64) -> Result<Self> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(invalid(format!("rho must be non-negative, got {rho}")));
        }
        Self::new(n_servers, rho * service_speed, service_speed)
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn arrival_rate_per_server(&self) -> f64 {
        self.arrival_rate_per_server
    }

    pub fn service_speed(&self) -> f64 {
        self.service_speed
    }

    /// Total arrival rate `N * lambda`.
    pub fn total_arrival_rate(&self) -> f64 {
        self.n_servers as f64 * self.arrival_rate_per_server
    }

    pub fn load(&self) -> f64 {
        self.arrival_rate_per_server / self.service_speed
    }
}

/// An undirected server pair with its selection probability. `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: u32,
    pub j: u32,
    pub p: f64,
}

impl Edge {
    pub fn contains(&self, server: u32) -> bool {
        self.i == server || self.j == server
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.i, self.j)
    }
}

/// A simple graph on servers `1..=N` whose positive edge weights sum to one.
///
/// Exact rational weights are kept alongside the doubles whenever the graph
/// was built from rationals that sum to exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeightedGraph {
    n_servers: usize,
    edges: Vec<Edge>,
    exact: Option<Vec<BigRational>>,
}

impl EdgeWeightedGraph {
    /// Builds a graph from `(i, j, p)` triples in double precision.
    ///
    /// Zero-weight edges are dropped. Weights are also recorded as the exact
    /// rationals of their decimal representation; those are kept only if they
    /// sum to exactly one.
    pub fn new(n_servers: usize, edges: &[(u32, u32, f64)]) -> Result<Self> {
        let exact: Option<Vec<BigRational>> = edges
            .iter()
            .map(|&(_, _, p)| rational_from_decimal(p))
            .collect();
        match exact {
            Some(weights) => {
                let triples: Vec<_> = edges
                    .iter()
                    .zip(weights)
                    .map(|(&(i, j, _), w)| (i, j, w))
                    .collect();
                match Self::from_exact(n_servers, &triples) {
                    Ok(g) => Ok(g),
                    Err(_) => Self::build(n_servers, edges, None),
                }
            }
            None => Self::build(n_servers, edges, None),
        }
    }

    /// Builds a graph from exact rational weights, which must sum to one.
    pub fn from_exact(n_servers: usize, edges: &[(u32, u32, BigRational)]) -> Result<Self> {
        let total: BigRational = edges
            .iter()
            .fold(BigRational::zero(), |acc, (_, _, p)| acc + p);
        if !total.is_one() {
            return Err(invalid(format!("edge weights must sum to 1, got {total}")));
        }
        let doubles: Vec<_> = edges
            .iter()
            .map(|(i, j, p)| (*i, *j, ratio_to_f64(p)))
            .collect();
        let exact: Vec<BigRational> = edges.iter().map(|(_, _, p)| p.clone()).collect();
        Self::build(n_servers, &doubles, Some(exact))
    }

    fn build(
        n_servers: usize,
        edges: &[(u32, u32, f64)],
        exact: Option<Vec<BigRational>>,
    ) -> Result<Self> {
        if n_servers < 2 {
            return Err(invalid(format!("n must be at least 2, got {n_servers}")));
        }
        let mut seen = HashMap::new();
        let mut kept = Vec::new();
        let mut kept_exact = Vec::new();
        for (idx, &(a, b, p)) in edges.iter().enumerate() {
            let label = format!("edge #{idx} {{{a},{b}}}");
            if a == 0 || b == 0 || a as usize > n_servers || b as usize > n_servers {
                return Err(invalid(format!(
                    "{label}: server ids must lie in 1..={n_servers}"
                )));
            }
            if a == b {
                return Err(invalid(format!("{label}: endpoints must differ")));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(invalid(format!(
                    "{label}: weight must be non-negative, got {p}"
                )));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if let Some(prev) = seen.insert((i, j), idx) {
                return Err(invalid(format!("{label}: duplicates edge #{prev}")));
            }
            let positive = match &exact {
                Some(ws) => !ws[idx].is_zero(),
                None => p > 0.0,
            };
            if positive {
                kept.push(Edge { i, j, p });
                if let Some(ws) = &exact {
                    kept_exact.push(ws[idx].clone());
                }
            }
        }
        if kept.is_empty() {
            return Err(invalid(
                "graph needs at least one edge with positive weight",
            ));
        }
        let sum: f64 = kept.iter().map(|e| e.p).sum();
        if exact.is_none() && (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(invalid(format!("edge weights must sum to 1, got {sum}")));
        }
        Ok(Self {
            n_servers,
            edges: kept,
            exact: exact.map(|_| kept_exact),
        })
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.p).collect()
    }

    /// Exact rational weights, when available.
    pub fn exact_weights(&self) -> Option<&[BigRational]> {
        self.exact.as_deref()
    }

    /// Bitmask of the two endpoints of edge `idx`, bit `id - 1` per server.
    ///
    /// Only meaningful for graphs with at most 64 servers.
    pub fn edge_mask(&self, idx: usize) -> u64 {
        let e = &self.edges[idx];
        (1u64 << (e.i - 1)) | (1u64 << (e.j - 1))
    }

    /// Same graph with servers renamed by `perm` (`perm[id - 1]` is the new id).
    pub fn relabel(&self, perm: &[u32]) -> Result<Self> {
        if perm.len() != self.n_servers {
            return Err(invalid("permutation length must equal n_servers"));
        }
        let mut check: Vec<u32> = perm.to_vec();
        check.sort_unstable();
        if check.iter().enumerate().any(|(k, &v)| v as usize != k + 1) {
            return Err(invalid("relabeling must be a permutation of 1..=N"));
        }
        let map = |id: u32| perm[id as usize - 1];
        match &self.exact {
            Some(ws) => {
                let triples: Vec<_> = self
                    .edges
                    .iter()
                    .zip(ws)
                    .map(|(e, w)| (map(e.i), map(e.j), w.clone()))
                    .collect();
                Self::from_exact(self.n_servers, &triples)
            }
            None => {
                let triples: Vec<_> = self
                    .edges
                    .iter()
                    .map(|e| (map(e.i), map(e.j), e.p))
                    .collect();
                Self::build(self.n_servers, &triples, None)
            }
        }
    }
}

fn exact_graph(n: usize, edges: Vec<(u32, u32, BigRational)>) -> Result<EdgeWeightedGraph> {
    EdgeWeightedGraph::from_exact(n, &edges)
}

/// The classical power-of-two graph: all `C(n, 2)` pairs with equal weight.
pub fn build_complete_uniform(n: usize) -> Result<EdgeWeightedGraph> {
    if n < 2 {
        return Err(invalid(format!("complete graph needs n >= 2, got {n}")));
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let w = BigRational::new(1.into(), pairs.into());
    let mut edges = Vec::with_capacity(pairs as usize);
    for i in 1..=n as u32 {
        for j in i + 1..=n as u32 {
            edges.push((i, j, w.clone()));
        }
    }
    exact_graph(n, edges)
}

/// Ring with alternating weights: edge `{i, i+1}` carries `eps * 2/N` for even
/// `i` and `(1 - eps) * 2/N` for odd `i`; the closing edge `{N, 1}` has index `N`.
pub fn build_ring(n: usize, epsilon: f64) -> Result<EdgeWeightedGraph> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    let eps = rational_from_decimal(epsilon)
        .ok_or_else(|| invalid(format!("epsilon must be finite, got {epsilon}")))?;
    build_ring_exact(n, &eps)
}

pub fn build_ring_exact(n: usize, epsilon: &BigRational) -> Result<EdgeWeightedGraph> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(invalid(format!("ring needs an even n >= 4, got {n}")));
    }
    if epsilon < &BigRational::zero() || epsilon > &BigRational::one() {
        return Err(invalid(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    let unit = BigRational::new(2.into(), (n as i64).into());
    let even = epsilon * &unit;
    let odd = (BigRational::one() - epsilon) * &unit;
    let edges = (1..=n as u32)
        .map(|i| {
            let j = if i as usize == n { 1 } else { i + 1 };
            let w = if i % 2 == 0 {
                even.clone()
            } else {
                odd.clone()
            };
            (i, j, w)
        })
        .collect();
    exact_graph(n, edges)
}

/// Toroidal grid on `n = k^2` servers; server `(r, c)` has id `r*k + c + 1`.
///
/// Each of the `2N` neighbour tuples carries weight `1/(2N)`. For `k = 2` the
/// wrap-around makes parallel tuples coincide; they merge into one edge with
/// the summed weight.
pub fn build_grid(n: usize) -> Result<EdgeWeightedGraph> {
    let k = (n as f64).sqrt().round() as usize;
    if k * k != n || k < 2 {
        return Err(invalid(format!(
            "grid needs a perfect square n >= 4, got {n}"
        )));
    }
    let unit = BigRational::new(1.into(), (2 * n as i64).into());
    let id = |r: usize, c: usize| (r * k + c + 1) as u32;
    let mut merged: Vec<((u32, u32), BigRational)> = Vec::new();
    let mut index: HashMap<(u32, u32), usize> = HashMap::new();
    for r in 0..k {
        for c in 0..k {
            for (a, b) in [
                (id(r, c), id((r + 1) % k, c)),
                (id(r, c), id(r, (c + 1) % k)),
            ] {
                let key = (a.min(b), a.max(b));
                match index.get(&key) {
                    Some(&pos) => merged[pos].1 += &unit,
                    None => {
                        index.insert(key, merged.len());
                        merged.push((key, unit.clone()));
                    }
                }
            }
        }
    }
    exact_graph(n, merged.into_iter().map(|((i, j), w)| (i, j, w)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFamily {
    CompleteUniform,
    Ring,
    Grid,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub i: u32,
    pub j: u32,
    pub p: f64,
}

/// JSON description of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub family: GraphFamily,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeSpec>>,
}

impl GraphConfig {
    pub fn complete(n: usize) -> Self {
        Self {
            family: GraphFamily::CompleteUniform,
            n,
            epsilon: None,
            edges: None,
        }
    }

    pub fn ring(n: usize, epsilon: f64) -> Self {
        Self {
            family: GraphFamily::Ring,
            n,
            epsilon: Some(epsilon),
            edges: None,
        }
    }

    pub fn grid(n: usize) -> Self {
        Self {
            family: GraphFamily::Grid,
            n,
            epsilon: None,
            edges: None,
        }
    }

    pub fn build(&self) -> Result<EdgeWeightedGraph> {
        match self.family {
            GraphFamily::CompleteUniform => build_complete_uniform(self.n),
            GraphFamily::Ring => {
                let eps = self
                    .epsilon
                    .ok_or_else(|| invalid("ring graph requires 'epsilon'"))?;
                build_ring(self.n, eps)
            }
            GraphFamily::Grid => build_grid(self.n),
            GraphFamily::Custom => {
                let edges = self
                    .edges
                    .as_ref()
                    .ok_or_else(|| invalid("custom graph requires 'edges'"))?;
                let triples: Vec<_> = edges.iter().map(|e| (e.i, e.j, e.p)).collect();
                EdgeWeightedGraph::new(self.n, &triples)
            }
        }
    }
}

/// A set of edges whose arrivals outpace the servers at their endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolatingSubset {
    pub edges: Vec<(u32, u32)>,
    pub arrival_rate: f64,
    pub service_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityMethod {
    /// Every non-empty subset of stored edges.
    EdgeSubsets,
    /// Every server subset with the edges it induces; equivalent to the
    /// edge scan because the tightest edge set for a given endpoint union is
    /// the set of all edges inside that union.
    ServerSubsets,
    /// Only the necessary condition `lambda < mu`.
    NecessaryOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    pub violating_subset: Option<ViolatingSubset>,
    /// Minimum of `mu * |endpoints(S)| - N * lambda * p(S)` over checked subsets.
    pub slack: f64,
    pub method: StabilityMethod,
    /// True when only a necessary condition was verified.
    pub partial: bool,
}

fn check_dims(graph: &EdgeWeightedGraph, params: &SystemParams) -> Result<()> {
    if graph.n_servers() != params.n_servers() {
        return Err(invalid(format!(
            "graph has {} servers but parameters have {}",
            graph.n_servers(),
            params.n_servers()
        )));
    }
    Ok(())
}

fn report(
    graph: &EdgeWeightedGraph,
    params: &SystemParams,
    slack: f64,
    tightest: &[usize],
    method: StabilityMethod,
) -> StabilityReport {
    let stable = slack > STABILITY_TOLERANCE * params.service_speed() * graph.n_servers() as f64;
    let violating_subset = (!stable).then(|| {
        let p: f64 = tightest.iter().map(|&k| graph.edges[k].p).sum();
        let mut servers: Vec<u32> = tightest
            .iter()
            .flat_map(|&k| [graph.edges[k].i, graph.edges[k].j])
            .collect();
        servers.sort_unstable();
        servers.dedup();
        ViolatingSubset {
            edges: tightest
                .iter()
                .map(|&k| (graph.edges[k].i, graph.edges[k].j))
                .collect(),
            arrival_rate: params.total_arrival_rate() * p,
            service_rate: params.service_speed() * servers.len() as f64,
        }
    });
    StabilityReport {
        stable,
        violating_subset,
        slack,
        method,
        partial: false,
    }
}

/// Exhaustive scan over all non-empty subsets `S` of stored edges: stable iff
/// `N lambda p(S) < mu |endpoints(S)|` for every `S`. Reports the subset with
/// the smallest slack when unstable.
pub fn check_stability(
    graph: &EdgeWeightedGraph,
    params: &SystemParams,
) -> Result<StabilityReport> {
    check_dims(graph, params)?;
    let m = graph.len();
    if m > MAX_SCAN_EDGES {
        return Err(Error::Size(format!(
            "{m} stored edges exceed the subset-scan limit of {MAX_SCAN_EDGES}"
        )));
    }
    // Compact server indices so unions fit in a u64 (at most 60 endpoints).
    let mut compact: HashMap<u32, u32> = HashMap::new();
    let mut masks = Vec::with_capacity(m);
    for e in graph.edges() {
        let next = compact.len() as u32;
        let a = *compact.entry(e.i).or_insert(next);
        let next = compact.len() as u32;
        let b = *compact.entry(e.j).or_insert(next);
        masks.push((1u64 << a) | (1u64 << b));
    }
    // Meet in the middle: subset sums and unions of each half are tabulated.
    let lo = m / 2;
    let hi = m - lo;
    let table = |offset: usize, len: usize| -> (Vec<f64>, Vec<u64>) {
        let size = 1usize << len;
        let mut sums = vec![0.0; size];
        let mut unions = vec![0u64; size];
        for s in 1..size {
            let bit = s.trailing_zeros() as usize;
            let rest = s & (s - 1);
            sums[s] = sums[rest] + graph.edges[offset + bit].p;
            unions[s] = unions[rest] | masks[offset + bit];
        }
        (sums, unions)
    };
    let (sums_lo, unions_lo) = table(0, lo);
    let (sums_hi, unions_hi) = table(lo, hi);
    let nl = params.total_arrival_rate();
    let mu = params.service_speed();
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for b in 0..sums_hi.len() {
        for a in 0..sums_lo.len() {
            if a == 0 && b == 0 {
                continue;
            }
            let servers = (unions_lo[a] | unions_hi[b]).count_ones() as f64;
            let slack = mu * servers - nl * (sums_lo[a] + sums_hi[b]);
            if slack < best.0 {
                best = (slack, a, b);
            }
        }
    }
    let (slack, a, b) = best;
    let tightest: Vec<usize> = (0..lo)
        .filter(|k| a >> k & 1 == 1)
        .chain((0..hi).filter(|k| b >> k & 1 == 1).map(|k| k + lo))
        .collect();
    Ok(report(
        graph,
        params,
        slack,
        &tightest,
        StabilityMethod::EdgeSubsets,
    ))
}

/// Equivalent stability scan over server subsets, cost `O(2^N |E|)`.
pub fn check_stability_by_servers(
    graph: &EdgeWeightedGraph,
    params: &SystemParams,
) -> Result<StabilityReport> {
    check_dims(graph, params)?;
    let n = graph.n_servers();
    if n > MAX_SCAN_SERVERS {
        return Err(Error::Size(format!(
            "{n} servers exceed the server-subset scan limit of {MAX_SCAN_SERVERS}"
        )));
    }
    let nl = params.total_arrival_rate();
    let mu = params.service_speed();
    let masks: Vec<u64> = (0..graph.len()).map(|k| graph.edge_mask(k)).collect();
    let mut best = (f64::INFINITY, 0u64);
    for t in 1u64..(1u64 << n) {
        let mut p = 0.0;
        let mut union = 0u64;
        for (k, &m) in masks.iter().enumerate() {
            if m & t == m {
                p += graph.edges[k].p;
                union |= m;
            }
        }
        if union == 0 || union != t {
            continue;
        }
        let slack = mu * union.count_ones() as f64 - nl * p;
        if slack < best.0 {
            best = (slack, t);
        }
    }
    let tightest: Vec<usize> = (0..masks.len())
        .filter(|&k| masks[k] & best.1 == masks[k])
        .collect();
    Ok(report(
        graph,
        params,
        best.0,
        &tightest,
        StabilityMethod::ServerSubsets,
    ))
}

/// Only the necessary condition `lambda < mu`, flagged as partial.
pub fn necessary_stability(
    graph: &EdgeWeightedGraph,
    params: &SystemParams,
) -> Result<StabilityReport> {
    check_dims(graph, params)?;
    let mut covered: Vec<u32> = graph.edges().iter().flat_map(|e| [e.i, e.j]).collect();
    covered.sort_unstable();
    covered.dedup();
    let service_rate = params.service_speed() * covered.len() as f64;
    let stable = params.arrival_rate_per_server() < params.service_speed();
    let violating_subset = (!stable).then(|| ViolatingSubset {
        edges: graph.edges().iter().map(|e| (e.i, e.j)).collect(),
        arrival_rate: params.total_arrival_rate(),
        service_rate,
    });
    Ok(StabilityReport {
        stable,
        violating_subset,
        slack: service_rate - params.total_arrival_rate(),
        method: StabilityMethod::NecessaryOnly,
        partial: true,
    })
}

/// Best available exact check: edge scan, then server scan, then the
/// necessary condition only.
pub fn stability(graph: &EdgeWeightedGraph, params: &SystemParams) -> Result<StabilityReport> {
    match check_stability(graph, params) {
        Err(Error::Size(_)) => match check_stability_by_servers(graph, params) {
            Err(Error::Size(_)) => necessary_stability(graph, params),
            other => other,
        },
        other => other,
    }
}
