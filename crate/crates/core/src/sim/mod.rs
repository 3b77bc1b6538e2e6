//! Continuous-time simulation of the dispatching policies on an arbitrary
//! compatibility graph.
//!
//! Each replication is a Gillespie-style walk of the Markov chain: the total
//! event rate is `N lambda + mu * busy`, and by memorylessness a departure is
//! a uniformly chosen busy server finishing its current job. Every state
//! transition counts as one event.

mod engine;

use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{stability, EdgeWeightedGraph, SystemParams};

/// Smallest accepted `n_events`.
pub const MIN_EVENTS: u64 = 1000;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;
/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "REDLAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Replicas at both servers; the slower copy is discarded on completion.
    #[serde(alias = "coc")]
    RedundancyCoc,
    /// Replicas wait at both servers; the sibling is discarded when one
    /// starts service. Arrivals pick the longest-idle compatible server.
    #[serde(alias = "cos")]
    RedundancyCos,
    Jiq,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "coc" | "redundancy-coc" => Ok(Policy::RedundancyCoc),
            "cos" | "redundancy-cos" => Ok(Policy::RedundancyCos),
            "jiq" => Ok(Policy::Jiq),
            other => Err(format!(
                "unknown policy '{other}' (expected coc, cos or jiq)"
            )),
        }
    }
}

/// JIQ choice when both sampled servers are idle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JiqTiebreak {
    #[default]
    Uniform,
    LongestIdle,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub graph: EdgeWeightedGraph,
    pub params: SystemParams,
    pub policy: Policy,
    pub n_events: u64,
    pub n_runs: usize,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub jiq_tiebreak: JiqTiebreak,
    /// Run even if the stability check fails.
    pub allow_unstable: bool,
}

impl SimConfig {
    pub fn new(graph: EdgeWeightedGraph, params: SystemParams, policy: Policy) -> Self {
        Self {
            graph,
            params,
            policy,
            n_events: 100_000,
            n_runs: 10,
            seed: 0,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            jiq_tiebreak: JiqTiebreak::default(),
            allow_unstable: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph.n_servers() != self.params.n_servers() {
            return Err(invalid(format!(
                "graph has {} servers but parameters have {}",
                self.graph.n_servers(),
                self.params.n_servers()
            )));
        }
        if self.n_events < MIN_EVENTS {
            return Err(invalid(format!(
                "n_events must be at least {MIN_EVENTS}, got {}",
                self.n_events
            )));
        }
        if self.n_runs == 0 {
            return Err(invalid("n_runs must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(invalid(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !self.allow_unstable {
            let report = stability(&self.graph, &self.params)?;
            if !report.stable {
                return Err(Error::Unstable(match report.violating_subset {
                    Some(v) => format!(
                        "edges {:?} receive {:.6} but their servers serve {:.6}",
                        v.edges, v.arrival_rate, v.service_rate
                    ),
                    None => "stability condition fails".into(),
                }));
            }
        }
        Ok(())
    }
}

/// Time-weighted queue-length distribution over independent replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    /// Largest level with a non-zero entry in any run.
    pub qmax: usize,
    pub run_pmfs: Vec<Vec<f64>>,
    pub mean_pmf: Vec<f64>,
    pub pmf_se: Vec<f64>,
    pub pmf_ci95: Vec<f64>,
    pub mean_cdf: Vec<f64>,
    /// `P{Q >= q}` averaged over runs.
    pub mean_ccdf: Vec<f64>,
    pub ccdf_se: Vec<f64>,
    /// Recorded (post-warm-up) time of each run.
    pub run_times: Vec<f64>,
    pub events_per_run: u64,
    /// Post-warm-up time spent at each level, pooled over runs.
    pub level_time: Vec<f64>,
    /// Post-warm-up departures out of each level, pooled over runs.
    pub level_departures: Vec<u64>,
}

fn mean_and_se(columns: impl Iterator<Item = f64> + Clone, runs: usize) -> (f64, f64) {
    let r = runs as f64;
    let mean = columns.clone().sum::<f64>() / r;
    if runs < 2 {
        return (mean, 0.0);
    }
    let var = columns.map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

impl EmpiricalDistribution {
    fn from_runs(
        run_pmfs: Vec<Vec<f64>>,
        run_times: Vec<f64>,
        events: u64,
        level_time: Vec<f64>,
        level_departures: Vec<u64>,
    ) -> Self {
        let qmax = run_pmfs
            .iter()
            .filter_map(|p| p.iter().rposition(|x| *x > 0.0))
            .max()
            .unwrap_or(0);
        let run_pmfs: Vec<Vec<f64>> = run_pmfs
            .into_iter()
            .map(|mut p| {
                p.resize(qmax + 1, 0.0);
                p
            })
            .collect();
        let runs = run_pmfs.len();
        let run_cdfs: Vec<Vec<f64>> = run_pmfs
            .iter()
            .map(|p| {
                p.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        // P{Q >= q} = 1 - P{Q <= q - 1}
        let run_ccdfs: Vec<Vec<f64>> = run_cdfs
            .iter()
            .map(|c| {
                (0..=qmax)
                    .map(|q| if q == 0 { 1.0 } else { 1.0 - c[q - 1] })
                    .collect()
            })
            .collect();
        let mut mean_pmf = Vec::with_capacity(qmax + 1);
        let mut pmf_se = Vec::with_capacity(qmax + 1);
        let mut mean_cdf = Vec::with_capacity(qmax + 1);
        let mut mean_ccdf = Vec::with_capacity(qmax + 1);
        let mut ccdf_se = Vec::with_capacity(qmax + 1);
        for q in 0..=qmax {
            let (m, se) = mean_and_se(run_pmfs.iter().map(|p| p[q]), runs);
            mean_pmf.push(m);
            pmf_se.push(se);
            mean_cdf.push(mean_and_se(run_cdfs.iter().map(|c| c[q]), runs).0);
            let (m, se) = mean_and_se(run_ccdfs.iter().map(|c| c[q]), runs);
            mean_ccdf.push(m);
            ccdf_se.push(se);
        }
        let pmf_ci95 = pmf_se.iter().map(|s| 1.96 * s).collect();
        Self {
            qmax,
            run_pmfs,
            mean_pmf,
            pmf_se,
            pmf_ci95,
            mean_cdf,
            mean_ccdf,
            ccdf_se,
            run_times,
            events_per_run: events,
            level_time,
            level_departures,
        }
    }

    /// Point mass at zero (no arrivals).
    fn empty(runs: usize, events: u64) -> Self {
        Self::from_runs(
            vec![vec![1.0]; runs],
            vec![0.0; runs],
            events,
            vec![0.0],
            vec![0],
        )
    }

    pub fn summary(&self) -> CcdfSummary {
        CcdfSummary {
            ccdf: self.mean_ccdf.clone(),
            ccdf_se: self.ccdf_se.clone(),
        }
    }

    /// Estimated departure rate out of level `q`, or `None` if never visited.
    pub fn departure_rate(&self, q: usize) -> Option<f64> {
        let t = *self.level_time.get(q)?;
        (t > 0.0).then(|| self.level_departures[q] as f64 / t)
    }
}

/// Mean `P{Q >= q}` and its standard error for `q = 0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfSummary {
    pub ccdf: Vec<f64>,
    pub ccdf_se: Vec<f64>,
}

/// Builds the worker pool, honouring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            invalid(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        if n == 0 {
            return Err(invalid(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            )));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))
}

/// Runs `n_runs` independent replications. Run `r` draws from the ChaCha8
/// stream `r` of `seed`, so results do not depend on scheduling.
pub fn simulate(config: &SimConfig) -> Result<EmpiricalDistribution> {
    config.validate()?;
    if config.params.arrival_rate_per_server() == 0.0 {
        return Ok(EmpiricalDistribution::empty(config.n_runs, config.n_events));
    }
    let edges: Vec<(usize, usize)> = config
        .graph
        .edges()
        .iter()
        .map(|e| (e.i as usize - 1, e.j as usize - 1))
        .collect();
    let sampler = WeightedIndex::new(config.graph.weights())
        .map_err(|e| invalid(format!("edge weights: {e}")))?;
    let ctx = engine::Context {
        n_servers: config.graph.n_servers(),
        edges: &edges,
        sampler: &sampler,
        arrival_rate: config.params.total_arrival_rate(),
        mu: config.params.service_speed(),
        n_events: config.n_events,
        warmup_events: (config.warmup_fraction * config.n_events as f64).floor() as u64,
    };
    let run = |r: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64);
        match config.policy {
            Policy::RedundancyCoc => engine::run_coc(&ctx, &mut rng),
            Policy::RedundancyCos => engine::run_cos(&ctx, &mut rng),
            Policy::Jiq => engine::run_jiq(&ctx, &mut rng, config.jiq_tiebreak),
        }
    };
    let outputs: Vec<engine::RunOutput> =
        thread_pool()?.install(|| (0..config.n_runs).into_par_iter().map(run).collect());

    let levels = outputs
        .iter()
        .map(|o| o.level_time.len())
        .max()
        .unwrap_or(1);
    let mut level_time = vec![0.0; levels];
    let mut level_departures = vec![0u64; levels];
    for o in &outputs {
        for (q, t) in o.level_time.iter().enumerate() {
            level_time[q] += t;
            level_departures[q] += o.level_departures[q];
        }
    }
    let run_pmfs = outputs
        .iter()
        .map(|o| o.level_time.iter().map(|t| t / o.total_time).collect())
        .collect();
    let run_times = outputs.iter().map(|o| o.total_time).collect();
    Ok(EmpiricalDistribution::from_runs(
        run_pmfs,
        run_times,
        config.n_events,
        level_time,
        level_departures,
    ))
}

/// `P{B >= q} - P{A >= q}` with combined standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfDifference {
    pub qmax: usize,
    /// Set when the requested range exceeded one of the supports.
    pub truncated: bool,
    pub diff: Vec<f64>,
    pub se: Vec<f64>,
    pub ci95: Vec<f64>,
}

impl CdfDifference {
    /// Mean of the per-level differences over `q = 1..=qmax`.
    pub fn average(&self) -> f64 {
        if self.qmax == 0 {
            return 0.0;
        }
        self.diff[1..].iter().sum::<f64>() / self.qmax as f64
    }
}

/// Difference series between two summaries on `q = 0..=qmax`, truncated to the
/// shorter support.
pub fn compare_summaries(a: &CcdfSummary, b: &CcdfSummary, qmax: usize) -> Result<CdfDifference> {
    if qmax == 0 {
        return Err(invalid("qmax must be at least 1"));
    }
    let common = a.ccdf.len().min(b.ccdf.len()).saturating_sub(1);
    let truncated = qmax > common;
    let qmax = qmax.min(common);
    let diff: Vec<f64> = (0..=qmax).map(|q| b.ccdf[q] - a.ccdf[q]).collect();
    let se: Vec<f64> = (0..=qmax)
        .map(|q| a.ccdf_se[q].hypot(b.ccdf_se[q]))
        .collect();
    let ci95 = se.iter().map(|s| 1.96 * s).collect();
    Ok(CdfDifference {
        qmax,
        truncated,
        diff,
        se,
        ci95,
    })
}

pub fn compare_empirical(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    qmax: usize,
) -> Result<CdfDifference> {
    compare_summaries(&a.summary(), &b.summary(), qmax)
}
