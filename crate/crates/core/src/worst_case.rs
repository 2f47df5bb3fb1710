//! Worst-case scenarios: the minimizer of the (jump-adjusted) risk premium
//! `bᵀΣ⁻¹b` over an uncertainty set.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::linalg::{quad_form_inv_in_place, solve_pd};
use crate::model::{adjusted_moments, Criterion, Scenario, UncertaintySet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseLabel {
    /// Long the first asset, short the second.
    ShortSecond,
    LongBoth,
    /// Zero position in the second asset; the minimizer is not unique.
    IgnoreSecond,
    Numeric,
    /// The uncertainty set is a single scenario.
    Degenerate,
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchDiagnostics {
    pub evaluations: u64,
    pub skipped_non_pd: u64,
    pub skipped_infeasible: u64,
    pub grid_passes: u32,
    pub descent_sweeps: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCaseResult {
    pub theta_hat: Scenario,
    pub risk_premium: f64,
    pub case_label: CaseLabel,
    /// Set when the minimizer is one point of a manifold of minimizers.
    pub manifold: Option<String>,
    pub diagnostics: SearchDiagnostics,
}

impl WorstCaseResult {
    /// `Σ̂_F⁻¹ b̂_F`; every solved strategy is a positive multiple of it.
    pub fn direction(&self) -> DVector<f64> {
        let (b, s) = adjusted_moments(&self.theta_hat);
        solve_pd(&s, &b).expect("worst-case covariance is positive definite")
    }

    /// Whether the signs of `Σ̂⁻¹b̂` match the case label.
    pub fn sign_pattern_consistent(&self) -> bool {
        let d = self.direction();
        match self.case_label {
            CaseLabel::ShortSecond => d[0] > 0.0 && d[1] < 0.0,
            CaseLabel::LongBoth => d[0] > 0.0 && d[1] > 0.0,
            CaseLabel::IgnoreSecond => d[1].abs() <= 1e-12 * (1.0 + d[0].abs()),
            CaseLabel::Numeric | CaseLabel::Degenerate => true,
        }
    }
}

/// `bᵀΣ⁻¹b` through a Cholesky solve.
pub fn risk_premium(b: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    Ok(b.dot(&solve_pd(sigma, b)?))
}

/// Risk premium of the jump-adjusted moments of `s`.
pub fn adjusted_risk_premium(s: &Scenario) -> Result<f64> {
    let (b, m) = adjusted_moments(s);
    risk_premium(&b, &m)
}

/// Closed-form minimizer for two assets under the ordering assumption.
///
/// In Sharpe-ratio form `P = s₁² + (s₂ − ρ s₁)²/(1 − ρ²) ≥ s₁²`, with
/// `s₁ = b₁/σ₁ ≥ b̲₁/σ̄₁`. The lower bound is attained unless every feasible
/// `s₂` lies strictly above or strictly below the line `ρ·b̲₁/σ̄₁`.
pub fn worst_case_two_asset(set: &UncertaintySet, _criterion: &Criterion) -> Result<WorstCaseResult> {
    set.check_two_asset_ordering()?;
    if set.jump_bounds.is_some() {
        return Err(Error::Unsupported(
            "the two-asset closed form has no jump adjustment; use the numeric solver".into(),
        ));
    }
    let (rho_lo, rho_hi) = match set.correlation {
        crate::model::CorrelationSet::Interval { lo, hi } => (lo, hi),
        _ => unreachable!("checked by check_two_asset_ordering"),
    };
    let (b1_lo, b2_lo, b2_hi) = (set.drift_lo[0], set.drift_lo[1], set.drift_hi[1]);
    let (s1_hi, s2_lo, s2_hi) = (set.vol_hi[0], set.vol_lo[1], set.vol_hi[1]);

    // ρ̲·(b̲₁/σ̄₁) > b̄₂/σ̲₂ and ρ̄·(b̲₁/σ̄₁) < b̲₂/σ̄₂, cross-multiplied
    let short_second = rho_lo * b1_lo * s2_lo > b2_hi * s1_hi;
    let long_both = rho_hi * b1_lo * s2_hi < b2_lo * s1_hi;

    let (theta_hat, label, manifold) = if short_second {
        (
            Scenario::two_asset(b1_lo, b2_hi, s1_hi, s2_lo, rho_lo)?,
            CaseLabel::ShortSecond,
            None,
        )
    } else if long_both {
        (
            Scenario::two_asset(b1_lo, b2_lo, s1_hi, s2_hi, rho_hi)?,
            CaseLabel::LongBoth,
            None,
        )
    } else {
        let r1 = b1_lo / s1_hi;
        let (rho, b2, sig2) = if r1 == 0.0 {
            (0.5 * (rho_lo + rho_hi), 0.0, s2_hi)
        } else {
            let lo = rho_lo.max(b2_lo / s2_hi / r1);
            let hi = rho_hi.min(b2_hi / s2_lo / r1);
            let rho = 0.5 * (lo + hi);
            let target = rho * r1;
            if target == 0.0 {
                (rho, 0.0, s2_hi)
            } else {
                let b2 = (target * s2_hi).clamp(b2_lo, b2_hi);
                (rho, b2, (b2 / target).clamp(s2_lo, s2_hi))
            }
        };
        (
            Scenario::two_asset(b1_lo, b2, s1_hi, sig2, rho)?,
            CaseLabel::IgnoreSecond,
            Some(format!(
                "minimizer not unique: any point with b1 = {b1_lo}, sigma1 = {s1_hi} and b2/sigma2 = rho*{r1} attains the same risk premium"
            )),
        )
    };
    let risk_premium = match label {
        CaseLabel::IgnoreSecond => (b1_lo / s1_hi).powi(2),
        _ => adjusted_risk_premium(&theta_hat)?,
    };
    Ok(WorstCaseResult {
        theta_hat,
        risk_premium,
        case_label: label,
        manifold,
        diagnostics: SearchDiagnostics::default(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericConfig {
    pub grid_resolution: usize,
    pub refinements: usize,
    /// Width factor applied to the search box on each refinement.
    pub shrink: f64,
    pub max_evals: u64,
    pub max_sweeps: usize,
}

impl Default for NumericConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 21,
            refinements: 2,
            shrink: 0.2,
            max_evals: 50_000_000,
            max_sweeps: 100,
        }
    }
}

struct Evaluator<'a> {
    set: &'a UncertaintySet,
    n: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Eval {
    Value(f64),
    NonPd,
    Infeasible,
}

impl Evaluator<'_> {
    fn eval(&self, c: &[f64], b: &mut [f64], sig: &mut [f64], y: &mut [f64]) -> Eval {
        if !self.set.fill_adjusted(c, b, sig) {
            return Eval::Infeasible;
        }
        match quad_form_inv_in_place(b, sig, self.n, y) {
            Some(v) => Eval::Value(v),
            None => Eval::NonPd,
        }
    }

    fn eval_alloc(&self, c: &[f64]) -> Option<f64> {
        let n = self.n;
        let (mut b, mut s, mut y) = (vec![0.0; n], vec![0.0; n * n], vec![0.0; n]);
        match self.eval(c, &mut b, &mut s, &mut y) {
            Eval::Value(v) => Some(v),
            _ => None,
        }
    }
}

fn grid_axis(lo: f64, hi: f64, r: usize) -> Vec<f64> {
    if lo == hi || r == 1 {
        return vec![lo];
    }
    (0..r)
        .map(|k| if k + 1 == r { hi } else { lo + (hi - lo) * k as f64 / (r - 1) as f64 })
        .collect()
}

#[derive(Default)]
struct PassStats {
    best: Option<(f64, u64)>,
    evals: u64,
    non_pd: u64,
    infeasible: u64,
}

fn better(a: Option<(f64, u64)>, b: Option<(f64, u64)>) -> Option<(f64, u64)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if x.0 < y.0 || (x.0 == y.0 && x.1 < y.1) {
                Some(x)
            } else {
                Some(y)
            }
        }
    }
}

fn grid_pass(ev: &Evaluator, axes: &[Vec<f64>]) -> PassStats {
    let total: u64 = axes.iter().map(|a| a.len() as u64).product();
    let n = ev.n;
    const CHUNK: u64 = 4096;
    let n_chunks = total.div_ceil(CHUNK);
    (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let (mut b, mut s, mut y) = (vec![0.0; n], vec![0.0; n * n], vec![0.0; n]);
            let mut c = vec![0.0; axes.len()];
            let mut st = PassStats::default();
            let end = ((chunk + 1) * CHUNK).min(total);
            for idx in chunk * CHUNK..end {
                // last axis varies fastest, so idx order is lexicographic
                let mut rem = idx;
                for (k, ax) in axes.iter().enumerate().rev() {
                    let m = ax.len() as u64;
                    c[k] = ax[(rem % m) as usize];
                    rem /= m;
                }
                st.evals += 1;
                match ev.eval(&c, &mut b, &mut s, &mut y) {
                    Eval::Value(v) if v.is_finite() => st.best = better(st.best, Some((v, idx))),
                    Eval::Value(_) | Eval::NonPd => st.non_pd += 1,
                    Eval::Infeasible => st.infeasible += 1,
                }
            }
            st
        })
        .reduce(PassStats::default, |a, b| PassStats {
            best: better(a.best, b.best),
            evals: a.evals + b.evals,
            non_pd: a.non_pd + b.non_pd,
            infeasible: a.infeasible + b.infeasible,
        })
}

fn decode(axes: &[Vec<f64>], mut idx: u64) -> Vec<f64> {
    let mut c = vec![0.0; axes.len()];
    for (k, ax) in axes.iter().enumerate().rev() {
        let m = ax.len() as u64;
        c[k] = ax[(idx % m) as usize];
        idx /= m;
    }
    c
}

/// Golden-section search of `f` on `[lo, hi]` with endpoint checks.
fn golden_min(f: &mut dyn FnMut(f64) -> Option<f64>, lo: f64, hi: f64) -> Option<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let val = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
    let (mut fc, mut fd) = (val(f(c)), val(f(d)));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = val(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = val(f(d));
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for x in [lo, hi, c, d, 0.5 * (a + b)] {
        if let Some(v) = f(x) {
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((x, v));
            }
        }
    }
    best
}

/// Grid search with box refinement, then coordinate descent.
pub fn worst_case_numeric(
    set: &UncertaintySet,
    _criterion: &Criterion,
    cfg: &NumericConfig,
) -> Result<WorstCaseResult> {
    if cfg.grid_resolution < 2 {
        return Err(Error::InvalidParameter("grid_resolution must be at least 2".into()));
    }
    let bounds = set.coordinate_bounds();
    let ev = Evaluator { set, n: set.n() };
    let mut diag = SearchDiagnostics::default();
    let mut boxes = bounds.clone();
    let mut incumbent: Option<(f64, Vec<f64>)> = None;

    for pass in 0..=cfg.refinements {
        let axes: Vec<Vec<f64>> = boxes
            .iter()
            .map(|(lo, hi)| grid_axis(*lo, *hi, cfg.grid_resolution))
            .collect();
        let total: u64 = axes
            .iter()
            .try_fold(1u64, |acc, a| acc.checked_mul(a.len() as u64))
            .unwrap_or(u64::MAX);
        if total > cfg.max_evals {
            return Err(Error::BudgetExceeded(format!(
                "grid pass {pass} needs {total} evaluations, cap is {}",
                cfg.max_evals
            )));
        }
        let st = grid_pass(&ev, &axes);
        diag.evaluations += st.evals;
        diag.skipped_non_pd += st.non_pd;
        diag.skipped_infeasible += st.infeasible;
        diag.grid_passes += 1;
        if let Some((v, idx)) = st.best {
            if incumbent.as_ref().is_none_or(|(bv, _)| v < *bv) {
                incumbent = Some((v, decode(&axes, idx)));
            }
        }
        let Some((_, x)) = &incumbent else {
            return Err(Error::NotPositiveDefinite(format!(
                "no positive-definite grid point found ({} skipped)",
                st.non_pd + st.infeasible
            )));
        };
        boxes = bounds
            .iter()
            .zip(x)
            .map(|((lo, hi), xi)| {
                let half = 0.5 * cfg.shrink * (hi - lo);
                ((xi - half).max(*lo), (xi + half).min(*hi))
            })
            .collect();
    }

    let (mut best_v, mut x) = incumbent.expect("set after the first pass");
    let corr = set.corr_coord_range();
    let hull = matches!(set.correlation, crate::model::CorrelationSet::Hull(_));
    for _ in 0..cfg.max_sweeps {
        diag.descent_sweeps += 1;
        let start = best_v;
        for k in 0..bounds.len() {
            let (lo, mut hi) = bounds[k];
            if lo == hi {
                continue;
            }
            if hull && corr.contains(&k) {
                let others: f64 = corr.clone().filter(|j| *j != k).map(|j| x[j]).sum();
                hi = hi.min(1.0 - others).max(lo);
            }
            let mut trial = x.clone();
            let mut count = 0u64;
            let mut f = |v: f64| {
                trial[k] = v;
                count += 1;
                ev.eval_alloc(&trial)
            };
            if let Some((arg, v)) = golden_min(&mut f, lo, hi) {
                if v < best_v {
                    best_v = v;
                    x[k] = arg;
                }
            }
            diag.evaluations += count;
        }
        if start - best_v <= 1e-16 * (1.0 + best_v.abs()) {
            break;
        }
    }

    let theta_hat = set.scenario_from_coords(&x)?;
    let label = if set.is_singleton() {
        CaseLabel::Degenerate
    } else {
        CaseLabel::Numeric
    };
    Ok(WorstCaseResult {
        theta_hat,
        risk_premium: best_v,
        case_label: label,
        manifold: None,
        diagnostics: diag,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Closed,
    Numeric,
    /// Closed form when its assumptions hold, numeric otherwise.
    Auto,
}

pub fn solve_worst_case(
    set: &UncertaintySet,
    criterion: &Criterion,
    method: Method,
    cfg: &NumericConfig,
) -> Result<WorstCaseResult> {
    if set.is_singleton() {
        let theta_hat = set.scenario_from_coords(&set.coordinate_bounds().iter().map(|b| b.0).collect::<Vec<_>>())?;
        let risk_premium = adjusted_risk_premium(&theta_hat)?;
        return Ok(WorstCaseResult {
            theta_hat,
            risk_premium,
            case_label: CaseLabel::Degenerate,
            manifold: None,
            diagnostics: SearchDiagnostics::default(),
        });
    }
    match method {
        Method::Closed => worst_case_two_asset(set, criterion),
        Method::Numeric => worst_case_numeric(set, criterion, cfg),
        Method::Auto => {
            let closed_ok = set.jump_bounds.is_none() && set.check_two_asset_ordering().is_ok();
            if closed_ok {
                worst_case_two_asset(set, criterion)
            } else {
                worst_case_numeric(set, criterion, cfg)
            }
        }
    }
}

/// `H(b̂,Σ̂) − 2H(b,Σ̂) + H(b̂,Σ)` with `H(b,Σ) = bᵀΣ̂⁻¹ΣΣ̂⁻¹b̂`, on
/// jump-adjusted moments. Non-positive for every `θ` when `θ̂` minimizes
/// the risk premium over a convex set.
pub fn pwz_inequality_check(theta_hat: &Scenario, theta: &Scenario) -> Result<f64> {
    let (bh, sh) = adjusted_moments(theta_hat);
    let (b, s) = adjusted_moments(theta);
    let a = solve_pd(&sh, &bh)?;
    let p = bh.dot(&a);
    Ok(p - 2.0 * b.dot(&a) + (s * &a).dot(&a))
}
