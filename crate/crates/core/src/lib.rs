//! Robust time-consistent mean-variance equilibria.
//!
//! Worst-case scenarios over product uncertainty sets, closed-form
//! equilibrium strategies with and without jumps, PDE residual and saddle
//! checks, and a reproducible Monte Carlo engine.

pub mod closed_form;
pub mod config;
pub mod error;
pub mod model;
pub mod pde_check;
pub mod report;
pub mod sampling;
pub mod simulate;
pub mod worst_case;

pub use closed_form::{ClosedFormSolution, Jet, OdeConfig};
pub use error::{Error, Result};
pub use model::{
    adjusted_moments, build_covariance, Criterion, CriterionKind, JumpSpec, Scenario, UncertaintySet,
    WealthDynamics,
};
pub use worst_case::{CaseLabel, WorstCaseResult};
