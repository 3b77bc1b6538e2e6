//! Choosing which server pair each job type is dispatched to.
//!
//! Type `k` (rate `lambda_k`) goes to one candidate pair; the induced edge
//! weights are `p_e = sum_{k -> e} lambda_k / sum lambda_k`. Among stable
//! assignments we minimise `alpha_2`, the leading light-traffic coefficient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha::alpha_dp;
use crate::error::{invalid, Error, Result};
use crate::exact::Arithmetic;
use crate::model::{stability, EdgeSpec, EdgeWeightedGraph, StabilityReport, SystemParams};

/// Largest number of assignments enumerated exhaustively.
pub const EXACT_BUDGET: u64 = 10_000_000;
/// Relative tolerance under which two objective values tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignProblem {
    #[serde(rename = "n")]
    pub n_servers: usize,
    #[serde(rename = "mu")]
    pub service_speed: f64,
    pub type_rates: Vec<f64>,
    /// Admissible pairs; all `C(N, 2)` pairs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_edges: Option<Vec<(u32, u32)>>,
}

impl DesignProblem {
    pub fn new(n_servers: usize, service_speed: f64, type_rates: Vec<f64>) -> Self {
        Self {
            n_servers,
            service_speed,
            type_rates,
            candidate_edges: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_servers < 2 {
            return Err(invalid(format!(
                "n must be at least 2, got {}",
                self.n_servers
            )));
        }
        if !(self.service_speed.is_finite() && self.service_speed > 0.0) {
            return Err(invalid(format!(
                "mu must be positive, got {}",
                self.service_speed
            )));
        }
        if self.type_rates.is_empty() {
            return Err(invalid("type_rates must contain at least one job type"));
        }
        for (k, &r) in self.type_rates.iter().enumerate() {
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid(format!(
                    "type_rates[{k}] must be positive, got {r}"
                )));
            }
        }
        if let Some(c) = &self.candidate_edges {
            if c.is_empty() {
                return Err(invalid("candidate_edges must not be empty"));
            }
            for (idx, &(i, j)) in c.iter().enumerate() {
                let n = self.n_servers as u32;
                if i == j || i < 1 || j < 1 || i > n || j > n {
                    return Err(invalid(format!(
                        "candidate_edges[{idx}] = [{i},{j}] is not a pair of distinct servers in 1..={n}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Candidate pairs, normalised to `i < j`, in input (or lexicographic) order.
    pub fn candidates(&self) -> Vec<(u32, u32)> {
        match &self.candidate_edges {
            Some(c) => c.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect(),
            None => {
                let n = self.n_servers as u32;
                (1..=n)
                    .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
                    .collect()
            }
        }
    }

    pub fn total_rate(&self) -> f64 {
        self.type_rates.iter().sum()
    }

    /// Parameters with `lambda = sum lambda_k / N`.
    pub fn params(&self) -> Result<SystemParams> {
        SystemParams::new(
            self.n_servers,
            self.total_rate() / self.n_servers as f64,
            self.service_speed,
        )
    }
}

/// `assignment[k]` is the index (into [`DesignProblem::candidates`]) of the
/// pair serving type `k`.
pub type Assignment = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignStatus {
    Optimal,
    Heuristic,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    pub status: DesignStatus,
    pub assignment: Assignment,
    /// Pair of each type.
    pub type_edges: Vec<(u32, u32)>,
    pub induced: Vec<EdgeSpec>,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub stability: StabilityReport,
    pub assignments_evaluated: u64,
}

fn check_assignment(
    problem: &DesignProblem,
    assignment: &[usize],
    n_candidates: usize,
) -> Result<()> {
    if assignment.len() != problem.type_rates.len() {
        return Err(invalid(format!(
            "assignment covers {} types but the problem has {}",
            assignment.len(),
            problem.type_rates.len()
        )));
    }
    if let Some((k, &e)) = assignment
        .iter()
        .enumerate()
        .find(|(_, &e)| e >= n_candidates)
    {
        return Err(invalid(format!(
            "assignment[{k}] = {e} is not a candidate index (< {n_candidates})"
        )));
    }
    Ok(())
}

/// Rates accumulated per candidate pair.
fn edge_rates(problem: &DesignProblem, assignment: &[usize], n_candidates: usize) -> Vec<f64> {
    let mut rates = vec![0.0; n_candidates];
    for (k, &e) in assignment.iter().enumerate() {
        rates[e] += problem.type_rates[k];
    }
    rates
}

/// Induced graph with `p_e = sum_{k -> e} lambda_k / sum lambda_k`.
pub fn induced_probabilities(
    problem: &DesignProblem,
    assignment: &[usize],
) -> Result<EdgeWeightedGraph> {
    problem.validate()?;
    let cands = problem.candidates();
    check_assignment(problem, assignment, cands.len())?;
    graph_from_rates(
        problem.n_servers,
        &cands,
        &edge_rates(problem, assignment, cands.len()),
    )
}

fn graph_from_rates(n: usize, cands: &[(u32, u32)], rates: &[f64]) -> Result<EdgeWeightedGraph> {
    // Merge duplicate candidates so the graph stays simple.
    let mut merged: Vec<(u32, u32, f64)> = Vec::new();
    for (&(i, j), &r) in cands.iter().zip(rates) {
        if r <= 0.0 {
            continue;
        }
        match merged.iter_mut().find(|m| m.0 == i && m.1 == j) {
            Some(m) => m.2 += r,
            None => merged.push((i, j, r)),
        }
    }
    let total: f64 = merged.iter().map(|m| m.2).sum();
    let triples: Vec<_> = merged.iter().map(|&(i, j, r)| (i, j, r / total)).collect();
    EdgeWeightedGraph::new(n, &triples)
}

/// Stability of the induced graph with `lambda = sum lambda_k / N`.
pub fn feasible(
    problem: &DesignProblem,
    assignment: &[usize],
    params: &SystemParams,
) -> Result<(bool, StabilityReport)> {
    if params.n_servers() != problem.n_servers {
        return Err(invalid(format!(
            "parameters have {} servers but the problem has {}",
            params.n_servers(),
            problem.n_servers
        )));
    }
    let graph = induced_probabilities(problem, assignment)?;
    let params = SystemParams::new(
        problem.n_servers,
        problem.total_rate() / problem.n_servers as f64,
        params.service_speed(),
    )?;
    let report = stability(&graph, &params)?;
    Ok((report.stable, report))
}

fn union_size(a: (u32, u32), b: (u32, u32)) -> f64 {
    let shared = [a.0 == b.0 || a.0 == b.1, a.1 == b.0 || a.1 == b.1]
        .iter()
        .filter(|x| **x)
        .count();
    (4 - shared) as f64
}

/// `alpha_2` of un-normalised pair weights, by the ordered pair sum
/// `sum_{e,f} w_e w_f / (2 |e ∪ f|) / W^2`.
fn alpha2_from_rates(cands: &[(u32, u32)], rates: &[f64]) -> f64 {
    let active: Vec<(usize, f64)> = rates
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, r)| *r > 0.0)
        .collect();
    let total: f64 = active.iter().map(|(_, r)| r).sum();
    let mut acc = 0.0;
    for &(e, re) in &active {
        for &(f, rf) in &active {
            acc += re * rf / (2.0 * union_size(cands[e], cands[f]));
        }
    }
    acc / (total * total)
}

fn decode(mut index: u64, base: usize, k: usize) -> Assignment {
    let mut out = vec![0; k];
    for slot in out.iter_mut().rev() {
        *slot = (index % base as u64) as usize;
        index /= base as u64;
    }
    out
}

fn solution(
    problem: &DesignProblem,
    cands: &[(u32, u32)],
    assignment: Assignment,
    status: DesignStatus,
    evaluated: u64,
) -> Result<DesignSolution> {
    let rates = edge_rates(problem, &assignment, cands.len());
    let graph = graph_from_rates(problem.n_servers, cands, &rates)?;
    let report = stability(&graph, &problem.params()?)?;
    let (alpha3, alpha4) = match alpha_dp(&graph, 4, Arithmetic::Double) {
        Ok(t) => (t.get(3), t.get(4)),
        Err(Error::Size(_)) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(DesignSolution {
        status,
        type_edges: assignment.iter().map(|&e| cands[e]).collect(),
        assignment,
        induced: graph
            .edges()
            .iter()
            .map(|e| EdgeSpec {
                i: e.i,
                j: e.j,
                p: e.p,
            })
            .collect(),
        alpha2: alpha2_from_rates(cands, &rates),
        alpha3,
        alpha4,
        stability: report,
        assignments_evaluated: evaluated,
    })
}

fn stable_rates(problem: &DesignProblem, cands: &[(u32, u32)], rates: &[f64]) -> Result<bool> {
    let total: f64 = rates.iter().sum();
    let graph = graph_from_rates(problem.n_servers, cands, rates)?;
    let params = SystemParams::new(
        problem.n_servers,
        total / problem.n_servers as f64,
        problem.service_speed,
    )?;
    Ok(stability(&graph, &params)?.stable)
}

/// Minimises `alpha_2` over stable assignments. Exhaustive (ties go to the
/// lexicographically smallest assignment) when `|candidates|^K <=`
/// [`EXACT_BUDGET`], otherwise greedy construction plus single-type local search.
pub fn optimize(problem: &DesignProblem) -> Result<DesignSolution> {
    problem.validate()?;
    let cands = problem.candidates();
    let k = problem.type_rates.len();
    let space = (cands.len() as f64).powi(k as i32);
    if space <= EXACT_BUDGET as f64 {
        optimize_exact(problem, &cands)
    } else {
        optimize_heuristic(problem, &cands)
    }
}

fn optimize_exact(problem: &DesignProblem, cands: &[(u32, u32)]) -> Result<DesignSolution> {
    let k = problem.type_rates.len();
    let base = cands.len();
    let total = (base as u64).pow(k as u32);
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| alpha2_from_rates(cands, &edge_rates(problem, &decode(idx, base, k), base)))
        .collect();
    let mut order: Vec<u64> = (0..total).collect();
    order.sort_by(|&a, &b| {
        values[a as usize]
            .total_cmp(&values[b as usize])
            .then(a.cmp(&b))
    });

    let is_stable = |idx: u64| {
        stable_rates(
            problem,
            cands,
            &edge_rates(problem, &decode(idx, base, k), base),
        )
    };
    let mut best: Option<u64> = None;
    let mut limit = f64::INFINITY;
    for &idx in &order {
        let v = values[idx as usize];
        if v > limit {
            break;
        }
        if best.is_some_and(|b| b < idx) {
            continue;
        }
        if is_stable(idx)? {
            if best.is_none() {
                limit = v * (1.0 + TIE_TOLERANCE);
            }
            best = Some(best.map_or(idx, |b| b.min(idx)));
        }
    }
    match best {
        Some(idx) => solution(
            problem,
            cands,
            decode(idx, base, k),
            DesignStatus::Optimal,
            total,
        ),
        // Witness: the alpha_2-best assignment and its violated subset.
        None => solution(
            problem,
            cands,
            decode(order[0], base, k),
            DesignStatus::Infeasible,
            total,
        ),
    }
}

#[allow(clippy::needless_range_loop)]
fn optimize_heuristic(problem: &DesignProblem, cands: &[(u32, u32)]) -> Result<DesignSolution> {
    let k = problem.type_rates.len();
    let base = cands.len();
    let mut types: Vec<usize> = (0..k).collect();
    types.sort_by(|&a, &b| {
        problem.type_rates[b]
            .total_cmp(&problem.type_rates[a])
            .then(a.cmp(&b))
    });

    let mut evaluated = 0u64;
    let mut rates = vec![0.0; base];
    let mut assignment = vec![usize::MAX; k];
    for &t in &types {
        // Key: (violates stability, alpha_2, edge index).
        let mut best: Option<(bool, f64, usize)> = None;
        for e in 0..base {
            rates[e] += problem.type_rates[t];
            let key = (
                !stable_rates(problem, cands, &rates)?,
                alpha2_from_rates(cands, &rates),
                e,
            );
            rates[e] -= problem.type_rates[t];
            evaluated += 1;
            if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                best = Some(key);
            }
        }
        let e = best.expect("at least one candidate").2;
        rates[e] += problem.type_rates[t];
        assignment[t] = e;
    }

    let mut current_stable = stable_rates(problem, cands, &rates)?;
    let mut current = alpha2_from_rates(cands, &rates);
    loop {
        let mut improved = false;
        for t in 0..k {
            let from = assignment[t];
            for e in 0..base {
                if e == from {
                    continue;
                }
                rates[from] -= problem.type_rates[t];
                rates[e] += problem.type_rates[t];
                let value = alpha2_from_rates(cands, &rates);
                evaluated += 1;
                let better_value = value < current * (1.0 - TIE_TOLERANCE);
                let ok = if current_stable {
                    better_value && stable_rates(problem, cands, &rates)?
                } else {
                    stable_rates(problem, cands, &rates)?
                };
                if ok {
                    assignment[t] = e;
                    current = value;
                    current_stable = true;
                    improved = true;
                    break;
                }
                rates[e] -= problem.type_rates[t];
                rates[from] += problem.type_rates[t];
            }
        }
        if !improved {
            break;
        }
    }
    let status = if current_stable {
        DesignStatus::Heuristic
    } else {
        DesignStatus::Infeasible
    };
    solution(problem, cands, assignment, status, evaluated)
}
