//! Explicit four-server queue-length laws and stochastic-dominance checks.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Distance from `eps = 1/2` below which the homogeneous-ring formula is used.
pub const HOMOGENEOUS_SWITCH: f64 = 1e-9;
/// Distance from `eps = 1/3, 2/3` inside which the heterogeneous-ring formula
/// is refused (removable singularities of its coefficients).
pub const RING_SINGULAR_GUARD: f64 = 1e-6;

/// Anything with a queue-length pmf and an accurate upper tail.
pub trait QueueLaw {
    fn pmf(&self, q: usize) -> f64;
    /// `P{Q >= q}`.
    fn ccdf(&self, q: usize) -> f64;
    /// `P{Q <= q}`.
    fn cdf(&self, q: usize) -> f64 {
        1.0 - self.ccdf(q + 1)
    }
}

/// `pmf(q) = prefactor * sum_k coefficient_k * base_k^q`, optionally with an
/// explicit `pmf(0)` when the sum only holds for `q >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDistribution {
    pub prefactor: f64,
    pub terms: Vec<(f64, f64)>,
    pub special_q0: Option<f64>,
}

impl SpectralDistribution {
    fn series(&self, q: usize) -> f64 {
        self.prefactor
            * self
                .terms
                .iter()
                .map(|(c, b)| c * b.powi(q as i32))
                .sum::<f64>()
    }

    /// `sum_{k >= q} prefactor * sum c b^k`, summed in closed form.
    fn tail(&self, q: usize) -> f64 {
        self.prefactor
            * self
                .terms
                .iter()
                .map(|(c, b)| c * b.powi(q as i32) / (1.0 - b))
                .sum::<f64>()
    }

    pub fn total_mass(&self) -> f64 {
        self.pmf(0) + self.tail(1)
    }
}

impl QueueLaw for SpectralDistribution {
    fn pmf(&self, q: usize) -> f64 {
        match (q, self.special_q0) {
            (0, Some(p0)) => p0,
            _ => self.series(q),
        }
    }

    fn ccdf(&self, q: usize) -> f64 {
        if q == 0 {
            self.total_mass()
        } else {
            self.tail(q)
        }
    }
}

/// `(q + 1)(1 - rho)^2 rho^q`: two independent M/M/1 queues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeBinomial {
    pub rho: f64,
}

impl QueueLaw for NegativeBinomial {
    fn pmf(&self, q: usize) -> f64 {
        (q as f64 + 1.0) * (1.0 - self.rho).powi(2) * self.rho.powi(q as i32)
    }

    fn ccdf(&self, q: usize) -> f64 {
        // sum_{k >= q} (k+1)(1-r)^2 r^k = r^q (1 + q(1-r))
        self.rho.powi(q as i32) * (1.0 + q as f64 * (1.0 - self.rho))
    }
}

/// `(1 - rho) rho^q`: a single pooled M/M/1 queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometric {
    pub rho: f64,
}

impl QueueLaw for Geometric {
    fn pmf(&self, q: usize) -> f64 {
        (1.0 - self.rho) * self.rho.powi(q as i32)
    }

    fn ccdf(&self, q: usize) -> f64 {
        self.rho.powi(q as i32)
    }
}

/// A normalised pmf known on `0..len`; the tail beyond is implied by the
/// missing mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tabulated {
    pub pmf: Vec<f64>,
}

impl QueueLaw for Tabulated {
    fn pmf(&self, q: usize) -> f64 {
        self.pmf.get(q).copied().unwrap_or(0.0)
    }

    fn ccdf(&self, q: usize) -> f64 {
        (1.0 - self.pmf.iter().take(q).sum::<f64>()).max(0.0)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(invalid(format!("rho must lie in [0, 1), got {rho}")));
    }
    if rho >= 1.0 {
        return Err(Error::Unstable(format!("rho = {rho} >= 1")));
    }
    Ok(())
}

/// Cancel-on-completion, uniform complete graph on four servers.
pub fn coc_complete4_pmf(rho: f64) -> Result<SpectralDistribution> {
    check_rho(rho)?;
    Ok(SpectralDistribution {
        prefactor: (1.0 - rho) * (3.0 - rho) * (3.0 - 2.0 * rho) / 9.0,
        terms: vec![(-4.0, 2.0 * rho / 3.0), (0.5, rho / 3.0), (4.5, rho)],
        special_q0: None,
    })
}

/// Cancel-on-completion, homogeneous ring on four servers.
pub fn coc_homring4_pmf(rho: f64) -> Result<SpectralDistribution> {
    check_rho(rho)?;
    Ok(SpectralDistribution {
        prefactor: (1.0 - rho) * (2.0 - rho) * (3.0 - 2.0 * rho) / (6.0 - rho),
        terms: vec![(-6.0, 2.0 * rho / 3.0), (2.0, rho / 2.0), (5.0, rho)],
        special_q0: None,
    })
}

/// Cancel-on-completion, ring on four servers with weights `eps/2` and
/// `(1 - eps)/2` on alternating edges.
pub fn coc_hetring4_pmf(rho: f64, epsilon: f64) -> Result<SpectralDistribution> {
    check_rho(rho)?;
    let e = epsilon;
    if !(e.is_finite() && e > 0.0 && e < 1.0) {
        if e == 0.0 || e == 1.0 {
            return Err(invalid(format!(
                "epsilon = {e} disconnects the ring; use negbinom_pmf for this case"
            )));
        }
        return Err(invalid(format!("epsilon must lie in (0, 1), got {e}")));
    }
    if (e - 0.5).abs() < HOMOGENEOUS_SWITCH {
        return coc_homring4_pmf(rho);
    }
    for s in [1.0 / 3.0, 2.0 / 3.0] {
        if (e - s).abs() < RING_SINGULAR_GUARD {
            return Err(invalid(format!(
                "epsilon = {e} is within {RING_SINGULAR_GUARD} of a removable singularity at {s:.6}; \
                 use product_form_pmf on build_ring(4, epsilon)"
            )));
        }
    }
    let f = 1.0 - e;
    let prefactor = (1.0 - rho) * (1.0 - f * rho) * (1.0 - e * rho) * (3.0 - 2.0 * rho)
        / (3.0 - 2.0 * rho + f * e * rho * rho);
    Ok(SpectralDistribution {
        prefactor,
        terms: vec![
            (6.0 * e * f / (2.0 - 9.0 * e * f), 2.0 * rho / 3.0),
            (f * f / (e * (2.0 - 3.0 * f)), f * rho),
            (e * e / (f * (2.0 - 3.0 * e)), e * rho),
            ((1.0 + e * f) / (e * f), rho),
        ],
        special_q0: None,
    })
}

pub fn negbinom_pmf(rho: f64, q: usize) -> Result<f64> {
    check_rho(rho)?;
    Ok(NegativeBinomial { rho }.pmf(q))
}

pub fn pooled_mm1_pmf(rho: f64, q: usize) -> Result<f64> {
    check_rho(rho)?;
    Ok(Geometric { rho }.pmf(q))
}

fn with_complement(prefactor: f64, terms: Vec<(f64, f64)>) -> SpectralDistribution {
    let mut d = SpectralDistribution {
        prefactor,
        terms,
        special_q0: Some(0.0),
    };
    d.special_q0 = Some(1.0 - d.tail(1));
    d
}

/// Normalising constant of the cancel-on-start complete-graph law.
pub fn cos_complete4_constant(rho: f64) -> f64 {
    (1.0 - rho) * (3.0 - rho) * (3.0 - 2.0 * rho) / ((1.0 + rho) * (3.0 + rho) * (3.0 + 2.0 * rho))
}

/// Normalising constant of the cancel-on-start homogeneous-ring law.
pub fn cos_homring4_constant(rho: f64) -> f64 {
    48.0 * (1.0 - rho) * (2.0 - rho) * (3.0 - 2.0 * rho)
        / (-2.0 * rho.powi(3) + 55.0 * rho * rho + 121.0 * rho + 66.0)
}

/// Cancel-on-start with longest-idle assignment, uniform complete graph on
/// four servers. `pmf(0)` is the complement of the `q >= 1` mass.
pub fn cos_complete4_pmf(rho: f64) -> Result<SpectralDistribution> {
    check_rho(rho)?;
    Ok(with_complement(
        cos_complete4_constant(rho),
        vec![(20.0, rho), (12.0, rho / 3.0), (-30.0, 2.0 * rho / 3.0)],
    ))
}

/// Cancel-on-start with longest-idle assignment, homogeneous ring on four
/// servers. `pmf(0)` is the complement of the `q >= 1` mass.
pub fn cos_homring4_pmf(rho: f64) -> Result<SpectralDistribution> {
    check_rho(rho)?;
    Ok(with_complement(
        cos_homring4_constant(rho),
        vec![
            (5.0, rho),
            (16.0 / 3.0, rho / 2.0),
            (-81.0 / 8.0, 2.0 * rho / 3.0),
        ],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceVerdict {
    /// True when `A <=st B` on `1..=qmax` within `tol`.
    pub holds: bool,
    /// `P{B >= q} - P{A >= q}` for `q = 1..=qmax` (index `q - 1`).
    pub margins: Vec<f64>,
    pub first_violation: Option<usize>,
}

/// Checks `P{A >= q} <= P{B >= q} + tol` for `1 <= q <= qmax`.
pub fn stochastic_dominance_compare(
    a: &dyn QueueLaw,
    b: &dyn QueueLaw,
    qmax: usize,
    tol: f64,
) -> Result<DominanceVerdict> {
    if qmax == 0 {
        return Err(invalid("qmax must be at least 1"));
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(invalid(format!("tol must be non-negative, got {tol}")));
    }
    let margins: Vec<f64> = (1..=qmax).map(|q| b.ccdf(q) - a.ccdf(q)).collect();
    let first_violation = margins.iter().position(|m| *m < -tol).map(|i| i + 1);
    Ok(DominanceVerdict {
        holds: first_violation.is_none(),
        margins,
        first_violation,
    })
}

/// `d/d eps P{Q = 0}` for the four-server heterogeneous ring.
pub fn empty_prob_epsilon_derivative(rho: f64, epsilon: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let e = epsilon;
    let d = 3.0 - 2.0 * rho + (1.0 - e) * e * rho * rho;
    Ok(rho * rho * (1.0 - rho) * (3.0 - 2.0 * rho) * (2.0 - rho) * (1.0 - 2.0 * e) / (d * d))
}

/// Column names of [`figure2`] rows after `q`.
pub const FIGURE2_CURVES: [&str; 6] = [
    "pooled",
    "pod2",
    "hom_ring",
    "ring_eps_0.7",
    "ring_eps_0.9",
    "ring_eps_1",
];

/// `P{Q >= q}` of the six four-server laws compared at one load: fully
/// pooled, uniform complete graph, homogeneous ring, rings with
/// `eps = 0.7, 0.9`, and the disconnected ring.
pub fn figure2(rho: f64, qmax: usize) -> Result<Vec<(usize, [f64; 6])>> {
    let pooled = Geometric { rho };
    let pod2 = coc_complete4_pmf(rho)?;
    let hom = coc_homring4_pmf(rho)?;
    let r7 = coc_hetring4_pmf(rho, 0.7)?;
    let r9 = coc_hetring4_pmf(rho, 0.9)?;
    let nb = NegativeBinomial { rho };
    let laws: [&dyn QueueLaw; 6] = [&pooled, &pod2, &hom, &r7, &r9, &nb];
    Ok((0..=qmax).map(|q| (q, laws.map(|l| l.ccdf(q)))).collect())
}
