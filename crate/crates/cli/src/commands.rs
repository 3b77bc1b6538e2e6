use std::path::{Path, PathBuf};

use clap::ValueEnum;
use redlab_core::alpha::{alpha_dp, bd_dominance_check, product_form_pmf, table1 as table1_cells};
use redlab_core::closed_forms::{
    coc_complete4_pmf, coc_hetring4_pmf, coc_homring4_pmf, cos_complete4_pmf, cos_homring4_pmf,
    figure2 as figure2_rows, negbinom_pmf, pooled_mm1_pmf, stochastic_dominance_compare, Geometric,
    NegativeBinomial, QueueLaw, Tabulated, FIGURE2_CURVES,
};
use redlab_core::design::{optimize, DesignProblem, DesignStatus};
use redlab_core::exact::Arithmetic;
use redlab_core::model::{build_complete_uniform, build_ring, GraphConfig, SystemParams};
use redlab_core::sim::{
    compare_empirical, compare_summaries, simulate as run_simulation, CcdfSummary, JiqTiebreak,
    Policy, SimConfig, DEFAULT_WARMUP_FRACTION,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::{fmt_num, Artifacts, Table};
use crate::{read_json, CliError};

/// Seed used when `--seed` and the config omit one.
pub const DEFAULT_SEED: u64 = 20_240_101;
/// Loads of the `figure3` curves.
pub const FIGURE3_RHOS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

type Out = Result<Vec<PathBuf>, CliError>;

pub fn alpha(out: &Path, config: &Path, qmax: usize, arithmetic: Arithmetic) -> Out {
    let mut art = Artifacts::new(out, "alpha");
    let graph_config: GraphConfig = read_json(config)?;
    let graph = graph_config.build()?;
    let table = alpha_dp(&graph, qmax, arithmetic)?;
    let mut csv = Table::new(&["q", "alpha", "alpha_exact"]);
    for q in 1..=qmax {
        let exact = table
            .get_exact(q)
            .map(|r| r.to_string())
            .unwrap_or_default();
        csv.push(vec![q.to_string(), fmt_num(table.get(q)), exact]);
    }
    art.add("alpha.csv", csv.render());
    art.finish(
        json!({ "graph": graph_config, "qmax": qmax, "arithmetic": table.arithmetic }),
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosedFormLaw {
    CocComplete4,
    CocHetring4,
    CocHomring4,
    Negbinom,
    PooledMm1,
    CosComplete4,
    CosHomring4,
}

pub fn closed_form(
    out: &Path,
    law: ClosedFormLaw,
    rho: f64,
    epsilon: Option<f64>,
    qmax: usize,
) -> Out {
    let mut art = Artifacts::new(out, "closed-form");
    let boxed: Box<dyn QueueLaw> = match law {
        ClosedFormLaw::CocComplete4 => Box::new(coc_complete4_pmf(rho)?),
        ClosedFormLaw::CocHetring4 => {
            let eps = epsilon.ok_or_else(|| {
                CliError::Core(redlab_core::Error::InvalidParameter(
                    "--epsilon is required for coc-hetring4".into(),
                ))
            })?;
            Box::new(coc_hetring4_pmf(rho, eps)?)
        }
        ClosedFormLaw::CocHomring4 => Box::new(coc_homring4_pmf(rho)?),
        ClosedFormLaw::Negbinom => {
            negbinom_pmf(rho, 0)?;
            Box::new(NegativeBinomial { rho })
        }
        ClosedFormLaw::PooledMm1 => {
            pooled_mm1_pmf(rho, 0)?;
            Box::new(Geometric { rho })
        }
        ClosedFormLaw::CosComplete4 => Box::new(cos_complete4_pmf(rho)?),
        ClosedFormLaw::CosHomring4 => Box::new(cos_homring4_pmf(rho)?),
    };
    let mut csv = Table::new(&["q", "pmf", "cdf", "ccdf"]);
    for q in 0..=qmax {
        csv.push(vec![
            q.to_string(),
            fmt_num(boxed.pmf(q)),
            fmt_num(boxed.cdf(q)),
            fmt_num(boxed.ccdf(q)),
        ]);
    }
    art.add("closed_form.csv", csv.render());
    art.finish(
        json!({ "law": law, "rho": rho, "epsilon": epsilon, "qmax": qmax }),
        None,
    )
}

fn default_mu() -> f64 {
    1.0
}
fn default_events() -> u64 {
    100_000
}
fn default_runs() -> usize {
    10
}
fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}
fn default_policy() -> Policy {
    Policy::RedundancyCoc
}

/// JSON input of `simulate`. Give exactly one of `rho` and `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    pub graph: GraphConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    #[serde(default = "default_events")]
    pub n_events: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub jiq_tiebreak: JiqTiebreak,
    #[serde(default)]
    pub allow_unstable: bool,
}

pub struct SimOverrides {
    pub seed: Option<u64>,
    pub rho: Option<f64>,
    pub events: Option<u64>,
    pub runs: Option<usize>,
    pub policy: Option<Policy>,
}

impl SimFile {
    /// Applies command-line overrides and fills in the seed.
    pub fn resolve(mut self, o: &SimOverrides) -> Result<Self, CliError> {
        if let Some(rho) = o.rho {
            self.rho = Some(rho);
            self.lambda = None;
        }
        if self.rho.is_some() == self.lambda.is_some() {
            return Err(redlab_core::Error::InvalidParameter(
                "give exactly one of 'rho' and 'lambda' (or pass --rho)".into(),
            )
            .into());
        }
        self.n_events = o.events.unwrap_or(self.n_events);
        self.n_runs = o.runs.unwrap_or(self.n_runs);
        self.policy = o.policy.unwrap_or(self.policy);
        self.seed = Some(o.seed.or(self.seed).unwrap_or(DEFAULT_SEED));
        Ok(self)
    }

    pub fn to_config(&self) -> Result<SimConfig, CliError> {
        let graph = self.graph.build()?;
        let params = match (self.rho, self.lambda) {
            (Some(rho), _) => SystemParams::from_load(self.graph.n, rho, self.mu)?,
            (_, Some(lambda)) => SystemParams::new(self.graph.n, lambda, self.mu)?,
            _ => unreachable!("checked by resolve"),
        };
        let mut c = SimConfig::new(graph, params, self.policy);
        c.n_events = self.n_events;
        c.n_runs = self.n_runs;
        c.seed = self.seed.unwrap_or(DEFAULT_SEED);
        c.warmup_fraction = self.warmup_fraction;
        c.jiq_tiebreak = self.jiq_tiebreak;
        c.allow_unstable = self.allow_unstable;
        Ok(c)
    }
}

pub fn simulate(out: &Path, config: &Path, overrides: SimOverrides) -> Out {
    let mut art = Artifacts::new(out, "simulate");
    let file: SimFile = read_json(config)?;
    let file = file.resolve(&overrides)?;
    let dist = run_simulation(&file.to_config()?)?;
    let mut csv = Table::new(&["q", "pmf_mean", "pmf_ci95", "cdf_mean", "ccdf_se"]);
    for q in 0..=dist.qmax {
        csv.push(vec![
            q.to_string(),
            fmt_num(dist.mean_pmf[q]),
            fmt_num(dist.pmf_ci95[q]),
            fmt_num(dist.mean_cdf[q]),
            fmt_num(dist.ccdf_se[q]),
        ]);
    }
    art.add("simulate.csv", csv.render());
    art.set_stats(json!({
        "events_per_run": dist.events_per_run,
        "simulated_time": dist.run_times.iter().sum::<f64>(),
    }));
    art.finish(
        serde_json::to_value(&file).expect("config serialises"),
        file.seed,
    )
}

/// Reads the `cdf_mean` and `ccdf_se` columns of a `simulate` CSV.
pub fn read_summary(path: &Path) -> Result<CcdfSummary, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    let bad = |message: String| CliError::Parse {
        path: path.into(),
        message,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| bad(format!("missing column '{name}'")))
    };
    let (cdf_col, se_col) = (col("cdf_mean")?, col("ccdf_se")?);
    let mut cdf = Vec::new();
    let mut se = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let num = |c: usize| -> Result<f64, CliError> {
            fields.get(c).and_then(|f| f.parse().ok()).ok_or_else(|| {
                bad(format!(
                    "line {}: column {} is not a number",
                    n + 2,
                    header[c]
                ))
            })
        };
        cdf.push(num(cdf_col)?);
        se.push(num(se_col)?);
    }
    if cdf.is_empty() {
        return Err(bad("no data rows".into()));
    }
    let ccdf = (0..cdf.len())
        .map(|q| if q == 0 { 1.0 } else { 1.0 - cdf[q - 1] })
        .collect();
    Ok(CcdfSummary { ccdf, ccdf_se: se })
}

fn difference_rows(csv: &mut Table, prefix: &[String], d: &redlab_core::sim::CdfDifference) {
    for q in 0..=d.qmax {
        let mut row = prefix.to_vec();
        row.extend([
            q.to_string(),
            fmt_num(d.diff[q]),
            fmt_num(d.se[q]),
            fmt_num(d.ci95[q]),
        ]);
        csv.push(row);
    }
}

pub fn compare(out: &Path, a: &Path, b: &Path, qmax: Option<usize>) -> Out {
    let mut art = Artifacts::new(out, "compare");
    let (sa, sb) = (read_summary(a)?, read_summary(b)?);
    let common = sa.ccdf.len().min(sb.ccdf.len()) - 1;
    let d = compare_summaries(&sa, &sb, qmax.unwrap_or(common).max(1))?;
    if d.truncated {
        eprintln!("warning: supports differ; compared q <= {}", d.qmax);
    }
    let mut csv = Table::new(&["q", "diff", "se", "ci95"]);
    difference_rows(&mut csv, &[], &d);
    art.add("compare.csv", csv.render());
    art.finish(
        json!({ "a": a, "b": b, "qmax": d.qmax, "truncated": d.truncated }),
        None,
    )
}

pub fn design_opt(out: &Path, config: &Path) -> Out {
    let mut art = Artifacts::new(out, "design-opt");
    let problem: DesignProblem = read_json(config)?;
    let solution = optimize(&problem)?;
    art.add(
        "design.json",
        serde_json::to_string_pretty(&solution).expect("solution serialises") + "\n",
    );
    let written = art.finish(
        serde_json::to_value(&problem).expect("problem serialises"),
        None,
    )?;
    if solution.status == DesignStatus::Infeasible {
        let witness = solution
            .stability
            .violating_subset
            .map(|v| {
                format!(
                    "edges {:?} receive {} > capacity {}",
                    v.edges,
                    fmt_num(v.arrival_rate),
                    fmt_num(v.service_rate)
                )
            })
            .unwrap_or_default();
        return Err(CliError::Infeasible(format!(
            "no stable assignment exists; {witness}"
        )));
    }
    Ok(written)
}

pub fn table1(out: &Path, arithmetic: Arithmetic) -> Out {
    let mut art = Artifacts::new(out, "table1");
    let cells = table1_cells(arithmetic)?;
    let mut csv = Table::new(&["epsilon", "n", "q", "ratio"]);
    for c in &cells {
        csv.push(vec![
            fmt_num(c.epsilon),
            c.n.to_string(),
            c.q.to_string(),
            fmt_num(c.value),
        ]);
    }
    art.add("table1.csv", csv.render());
    art.finish(json!({ "arithmetic": arithmetic }), None)
}

pub fn figure2(out: &Path, rho: f64, qmax: usize) -> Out {
    let mut art = Artifacts::new(out, "figure2");
    let rows = figure2_rows(rho, qmax)?;
    let mut header = vec!["q"];
    header.extend(FIGURE2_CURVES);
    let mut csv = Table::new(&header);
    for (q, vals) in rows {
        let mut row = vec![q.to_string()];
        row.extend(vals.iter().map(|v| fmt_num(*v)));
        csv.push(row);
    }
    art.add("figure2.csv", csv.render());
    art.finish(json!({ "rho": rho, "qmax": qmax }), None)
}

pub fn figure3(
    out: &Path,
    rho: Option<f64>,
    events: u64,
    runs: usize,
    seed: u64,
    qmax: usize,
) -> Out {
    let mut art = Artifacts::new(out, "figure3");
    let rhos: Vec<f64> = rho.map_or(FIGURE3_RHOS.to_vec(), |r| vec![r]);
    let mut cos = Table::new(&["rho", "q", "diff"]);
    let mut jiq = Table::new(&["rho", "q", "diff", "se", "ci95"]);
    for (i, &r) in rhos.iter().enumerate() {
        let (a, b) = (cos_complete4_pmf(r)?, cos_homring4_pmf(r)?);
        for q in 0..=qmax {
            cos.push(vec![
                fmt_num(r),
                q.to_string(),
                fmt_num(b.ccdf(q) - a.ccdf(q)),
            ]);
        }
        let params = SystemParams::from_load(4, r, 1.0)?;
        let mut ca = SimConfig::new(build_complete_uniform(4)?, params, Policy::Jiq);
        ca.n_events = events;
        ca.n_runs = runs;
        ca.seed = seed.wrapping_add(2 * i as u64);
        let mut cb = ca.clone();
        cb.graph = build_ring(4, 0.5)?;
        cb.seed = ca.seed.wrapping_add(1);
        let d = compare_empirical(&run_simulation(&ca)?, &run_simulation(&cb)?, qmax)?;
        difference_rows(&mut jiq, &[fmt_num(r)], &d);
    }
    art.add("figure3_cos.csv", cos.render());
    art.add("figure3_jiq.csv", jiq.render());
    art.finish(
        json!({ "rhos": rhos, "events": events, "runs": runs, "seed": seed, "qmax": qmax }),
        Some(seed),
    )
}

fn default_dominance_qmax() -> usize {
    16
}

/// JSON input of `dominance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominanceFile {
    pub a: GraphConfig,
    pub b: GraphConfig,
    #[serde(default = "default_dominance_qmax")]
    pub qmax: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

pub fn dominance(out: &Path, config: &Path, rho: Option<f64>, arithmetic: Arithmetic) -> Out {
    let mut art = Artifacts::new(out, "dominance");
    let mut file: DominanceFile = read_json(config)?;
    file.rho = Some(rho.or(file.rho).unwrap_or(0.8));
    let rho = file.rho.unwrap();
    let (ga, gb) = (file.a.build()?, file.b.build()?);
    let report = bd_dominance_check(&ga, &gb, file.qmax, arithmetic)?;
    let la = Tabulated {
        pmf: product_form_pmf(&ga, rho, file.qmax)?,
    };
    let lb = Tabulated {
        pmf: product_form_pmf(&gb, rho, file.qmax)?,
    };
    let verdict = stochastic_dominance_compare(&la, &lb, file.qmax, 0.0)?;
    let mut csv = Table::new(&["q", "ratio_a", "ratio_b", "ccdf_a", "ccdf_b", "margin"]);
    for q in 1..=file.qmax {
        csv.push(vec![
            q.to_string(),
            fmt_num(report.ratios_a[q - 1]),
            fmt_num(report.ratios_b[q - 1]),
            fmt_num(la.ccdf(q)),
            fmt_num(lb.ccdf(q)),
            fmt_num(verdict.margins[q - 1]),
        ]);
    }
    let summary = json!({
        "ratio_condition_holds": report.holds,
        "ratio_first_violation": report.first_violation,
        "tail_dominance_holds": verdict.holds,
        "tail_first_violation": verdict.first_violation,
    });
    art.add("dominance.csv", csv.render());
    art.add(
        "dominance.json",
        serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n",
    );
    art.finish(
        serde_json::to_value(&file).expect("config serialises"),
        None,
    )
}
