//! Monte Carlo simulation of wealth paths, estimation of the mean-variance
//! functional, and perturbation tests.

pub mod engine;
pub mod estimate;
pub mod perturb;
pub mod rng;
pub mod spill;

pub use engine::{
    simulate_paths, simulate_spliced, time_grid, ConstantStrategy, PathBatch, SimConfig, SplicedStrategy, Strategy,
};
pub use estimate::{estimate_j, estimate_values, JEstimate};
pub use perturb::{
    perturb_equilibrium, perturb_worst_case, CrnComparison, LevelSummary, PerturbConfig, PerturbKind,
    PerturbationReport, QuotientRow,
};
pub use spill::{read_rmvp, write_rmvp, Rmvp};
