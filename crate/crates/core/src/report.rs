//! Serializable command reports. Every type re-parses under the same
//! strict rules used for problem files.

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::closed_form::{ClosedFormSolution, NonBankruptcyFlag};
use crate::error::Result;
use crate::model::{adjusted_moments, Criterion, CriterionKind, Scenario, UncertaintySet};
use crate::pde_check::{residual_grid, saddle_check, DerivativeMode, GridConfig, ResidualTable, SaddleConfig, SaddleReport};
use crate::simulate::{JEstimate, PathBatch, PerturbationReport};
use crate::worst_case::{pwz_inequality_check, CaseLabel, SearchDiagnostics, WorstCaseResult};

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vec_of(v: &nalgebra::DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioReport {
    pub drift: Vec<f64>,
    pub vols: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    pub jump_rates: Option<Vec<f64>>,
    /// Drift and covariance including jump moments.
    pub drift_adjusted: Vec<f64>,
    pub covariance_adjusted: Vec<Vec<f64>>,
}

impl From<&Scenario> for ScenarioReport {
    fn from(s: &Scenario) -> Self {
        let (b, c) = adjusted_moments(s);
        Self {
            drift: vec_of(&s.drift),
            vols: vec_of(&s.vols()),
            correlation: rows(&s.correlation()),
            jump_rates: s.jump.as_ref().map(|j| vec_of(&j.rates())),
            drift_adjusted: vec_of(&b),
            covariance_adjusted: rows(&c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorstCaseReport {
    pub case_label: CaseLabel,
    pub risk_premium: f64,
    pub theta_hat: ScenarioReport,
    pub manifold: Option<String>,
    pub diagnostics: SearchDiagnostics,
}

impl From<&WorstCaseResult> for WorstCaseReport {
    fn from(w: &WorstCaseResult) -> Self {
        Self {
            case_label: w.case_label,
            risk_premium: w.risk_premium,
            theta_hat: (&w.theta_hat).into(),
            manifold: w.manifold.clone(),
            diagnostics: w.diagnostics.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeRow {
    pub t: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyReport {
    pub kind: CriterionKind,
    pub lambda: f64,
    pub t0: f64,
    pub horizon: f64,
    pub x0: f64,
    /// `α̂(t₀, x₀)`.
    pub alpha_hat: Vec<f64>,
    /// `Σ̂_F⁻¹b̂_F`.
    pub direction: Vec<f64>,
    pub value: f64,
    pub g: f64,
    pub f: f64,
    pub worst_case: WorstCaseReport,
    pub non_bankruptcy: Vec<NonBankruptcyFlag>,
    /// `(t, A, B)` at up to `ODE_TABLE_ROWS` nodes, always ending at `T`.
    pub ode_table: Option<Vec<OdeRow>>,
}

pub const ODE_TABLE_ROWS: usize = 11;

impl From<&ClosedFormSolution> for StrategyReport {
    fn from(s: &ClosedFormSolution) -> Self {
        let c: &Criterion = &s.criterion;
        let ode_table = s.ode.as_ref().map(|g| {
            let last = g.t.len() - 1;
            let stride = (last / (ODE_TABLE_ROWS - 1)).max(1);
            let mut idx: Vec<usize> = (0..=last).step_by(stride).collect();
            if *idx.last().unwrap() != last {
                idx.push(last);
            }
            idx.into_iter()
                .map(|i| OdeRow {
                    t: g.t[i],
                    a: g.a[i],
                    b: g.b[i],
                })
                .collect()
        });
        Self {
            kind: c.kind,
            lambda: c.lambda,
            t0: c.t0,
            horizon: c.horizon,
            x0: c.x0,
            alpha_hat: vec_of(&s.alpha(c.t0, c.x0)),
            direction: vec_of(s.direction()),
            value: s.value(c.t0, c.x0),
            g: s.g(c.t0, c.x0),
            f: s.f(c.t0, c.x0),
            worst_case: (&s.worst_case).into(),
            non_bankruptcy: s.non_bankruptcy.clone(),
            ode_table,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PwzSummary {
    pub samples: usize,
    /// Largest slack over sampled scenarios; non-positive when the
    /// inequality holds.
    pub max_slack: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeCheck {
    pub fd_residual_max: f64,
    pub richardson_estimate: f64,
    pub min_value: f64,
    pub terminal_exact: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyReport {
    pub max_residual: f64,
    pub max_identity_gap: f64,
    pub residual_tolerance: f64,
    pub identity_tolerance: f64,
    pub by_equation: Vec<(String, f64)>,
    pub saddle: SaddleReport,
    pub pwz: PwzSummary,
    pub ode: Option<OdeCheck>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn from_parts(table: &ResidualTable, saddle: SaddleReport, pwz: PwzSummary, ode: Option<OdeCheck>, residual_tolerance: f64) -> Self {
        let identity_tolerance = 1e-12;
        let max_residual = table.max_pde();
        let max_identity_gap = table.max_for("identity").unwrap_or(0.0);
        let passed = max_residual <= residual_tolerance
            && max_identity_gap <= identity_tolerance
            && saddle.passed
            && pwz.passed
            && ode.as_ref().is_none_or(|o| o.passed);
        Self {
            max_residual,
            max_identity_gap,
            residual_tolerance,
            identity_tolerance,
            by_equation: table.by_equation.clone(),
            saddle,
            pwz,
            ode,
            passed,
        }
    }
}

pub const PWZ_SAMPLES: usize = 100;
pub const PWZ_TOLERANCE: f64 = 1e-10;

/// Largest slack of the quadratic inequality over `samples` scenarios drawn
/// from the set, plus its corners.
pub fn pwz_summary(sol: &ClosedFormSolution, set: &UncertaintySet, samples: usize, seed: u64) -> Result<PwzSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut thetas: Vec<Scenario> = (0..samples).map(|_| set.sample(&mut rng)).collect();
    thetas.extend(set.corners());
    let mut max_slack = f64::NEG_INFINITY;
    for th in &thetas {
        max_slack = max_slack.max(pwz_inequality_check(sol.theta_hat(), th)?);
    }
    Ok(PwzSummary {
        samples: thetas.len(),
        max_slack,
        tolerance: PWZ_TOLERANCE,
        passed: max_slack <= PWZ_TOLERANCE,
    })
}

pub fn ode_check(sol: &ClosedFormSolution) -> Option<OdeCheck> {
    sol.ode.as_ref().map(|g| {
        let last = g.t.len() - 1;
        let fd = g.fd_residual_max();
        let terminal_exact = g.t[last] == sol.criterion.horizon && g.a[last] == 1.0 && g.b[last] == 1.0;
        OdeCheck {
            fd_residual_max: fd,
            richardson_estimate: g.error_estimate,
            min_value: g.min_value(),
            terminal_exact,
            passed: fd <= 1e-6 && g.error_estimate <= 1e-8 && g.min_value() > 0.0 && terminal_exact,
        }
    })
}

/// Residual grid, saddle sampling, the quadratic inequality and, for the
/// wealth-scaled case, the ODE diagnostics.
pub fn verify(sol: &ClosedFormSolution, set: &UncertaintySet, grid: &GridConfig, saddle: &SaddleConfig) -> Result<VerifyReport> {
    let table = residual_grid(sol, grid)?;
    let sr = saddle_check(sol, set, saddle);
    let pwz = pwz_summary(sol, set, PWZ_SAMPLES, saddle.seed)?;
    let tol = match grid.mode {
        DerivativeMode::Analytic => 1e-8,
        DerivativeMode::FiniteDifference => 1e-6,
    };
    Ok(VerifyReport::from_parts(&table, sr, pwz, ode_check(sol), tol))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateReport {
    pub estimate: JEstimate,
    pub value: f64,
    pub g: f64,
    /// `|Ĵ − V| / SE(Ĵ)`.
    pub j_gap_se: f64,
    /// `|mean − g| / SE(mean)`.
    pub mean_gap_se: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub dt_requested: f64,
    pub dt_adjusted: bool,
    pub seed: u64,
    pub passed: bool,
}

fn gap(a: f64, b: f64, se: f64) -> f64 {
    let d = (a - b).abs();
    if se > 0.0 {
        d / se
    } else if d == 0.0 {
        0.0
    } else {
        // JSON has no infinity
        f64::MAX
    }
}

impl SimulateReport {
    pub fn new(est: JEstimate, value: f64, g: f64, batch: &PathBatch) -> Self {
        let j_gap_se = gap(est.j_hat, value, est.standard_error_j);
        let mean_gap_se = gap(est.mean_hat, g, est.standard_error_mean);
        Self {
            passed: j_gap_se <= 3.0 && mean_gap_se <= 3.0,
            estimate: est,
            value,
            g,
            j_gap_se,
            mean_gap_se,
            n_steps: batch.n_steps,
            dt: batch.dt,
            dt_requested: batch.dt_requested,
            dt_adjusted: batch.dt_adjusted(),
            seed: batch.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbReport {
    pub equilibrium: PerturbationReport,
    pub worst_case: PerturbationReport,
    pub passed: bool,
}
