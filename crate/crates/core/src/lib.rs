//! Power-of-two redundancy load balancing on edge-weighted compatibility
//! graphs: exact queue-length laws, coverage polynomials, simulation and
//! design of the job-type distribution.

pub mod alpha;
pub mod closed_forms;
pub mod design;
pub mod error;
pub mod exact;
pub mod model;
pub mod sim;

pub use alpha::{alpha_bruteforce, alpha_dp, AlphaTable};
pub use closed_forms::{QueueLaw, SpectralDistribution};
pub use design::{optimize, DesignProblem, DesignSolution, DesignStatus};
pub use error::{Error, Result};
pub use exact::Arithmetic;
pub use model::{
    build_complete_uniform, build_grid, build_ring, stability, EdgeWeightedGraph, GraphConfig,
    StabilityReport, SystemParams,
};
pub use sim::{simulate, EmpiricalDistribution, Policy, SimConfig};
