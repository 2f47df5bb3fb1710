//! Explicit equilibrium solutions: strategy `α̂`, value `V`, expected
//! terminal state `g` and the auxiliary `f`.

pub mod ode;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{adjusted_moments, Criterion, CriterionKind, JumpSpec, Scenario, UncertaintySet};
use crate::worst_case::{solve_worst_case, CaseLabel, Method, NumericConfig, SearchDiagnostics, WorstCaseResult};

pub use ode::{AbGrid, OdeConfig};

/// Value and first/second partial derivatives at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dt: f64,
    pub dx: f64,
    pub dxx: f64,
}

impl Jet {
    fn scaled(self, s: f64) -> Jet {
        Jet {
            value: self.value * s,
            dt: self.dt * s,
            dx: self.dx * s,
            dxx: self.dxx * s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Field {
    Value,
    G,
    /// `f(t, x)`; for wealth-scaled risk aversion this is `f(t, x, x)`.
    F,
    /// `f(t, x, y)` with the risk-aversion argument `y` frozen.
    FAt(f64),
}

/// Jump type `l` whose exposure `α̂ᵀJ_l` leaves `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonBankruptcyFlag {
    pub jump_type: usize,
    pub exposure: f64,
}

#[derive(Clone, Debug)]
pub struct ClosedFormSolution {
    pub criterion: Criterion,
    pub worst_case: WorstCaseResult,
    /// Jump-adjusted `b̂_F`.
    pub b_hat: DVector<f64>,
    /// Jump-adjusted `Σ̂_F`.
    pub sigma_hat: DMatrix<f64>,
    pub risk_premium: f64,
    pub non_bankruptcy: Vec<NonBankruptcyFlag>,
    pub ode: Option<AbGrid>,
    direction: DVector<f64>,
    value_scale: f64,
}

impl ClosedFormSolution {
    /// Builds the solution of `criterion.kind` around a given worst case.
    pub fn from_worst_case(criterion: Criterion, worst_case: WorstCaseResult, ode_cfg: &OdeConfig) -> Result<Self> {
        let theta = &worst_case.theta_hat;
        if criterion.kind == CriterionKind::LogReturn && theta.jump.is_some() {
            return Err(Error::Unsupported(
                "log return with jumps has no closed form; it can only be simulated".into(),
            ));
        }
        let (b_hat, sigma_hat) = adjusted_moments(theta);
        let direction = crate::model::linalg::solve_pd(&sigma_hat, &b_hat)?;
        let risk_premium = b_hat.dot(&direction);
        let ode = match criterion.kind {
            CriterionKind::WealthScaledLambda => Some(ode::solve_ab(
                risk_premium,
                criterion.lambda,
                criterion.t0,
                criterion.horizon,
                ode_cfg,
            )?),
            _ => None,
        };
        let mut sol = Self {
            criterion,
            worst_case,
            b_hat,
            sigma_hat,
            risk_premium,
            non_bankruptcy: Vec::new(),
            ode,
            direction,
            value_scale: 1.0,
        };
        sol.non_bankruptcy = sol.check_non_bankruptcy();
        Ok(sol)
    }

    /// Same criterion with `θ̂` replaced by an arbitrary scenario.
    pub fn with_theta_hat(&self, theta: Scenario, ode_cfg: &OdeConfig) -> Result<Self> {
        let rp = crate::worst_case::adjusted_risk_premium(&theta)?;
        let wc = WorstCaseResult {
            theta_hat: theta,
            risk_premium: rp,
            case_label: CaseLabel::Numeric,
            manifold: None,
            diagnostics: SearchDiagnostics::default(),
        };
        Self::from_worst_case(self.criterion, wc, ode_cfg)
    }

    /// Multiplies `V` (only) by `s`. Used to falsify the residual checks.
    pub fn with_value_scale(mut self, s: f64) -> Self {
        self.value_scale = s;
        self
    }

    pub fn kind(&self) -> CriterionKind {
        self.criterion.kind
    }

    pub fn lambda(&self) -> f64 {
        self.criterion.lambda
    }

    pub fn theta_hat(&self) -> &Scenario {
        &self.worst_case.theta_hat
    }

    /// `Σ̂_F⁻¹ b̂_F`.
    pub fn direction(&self) -> &DVector<f64> {
        &self.direction
    }

    /// Scalar multiplying `Σ̂_F⁻¹b̂_F` in `α̂(t, x)`.
    pub fn alpha_scale(&self, t: f64, x: f64) -> f64 {
        let lam = self.lambda();
        match self.kind() {
            CriterionKind::TerminalWealth => 1.0 / (2.0 * lam),
            CriterionKind::LogReturn => 1.0 / (1.0 + 2.0 * lam),
            CriterionKind::WealthScaledLambda => {
                let p = self.ode.as_ref().expect("ODE grid present").eval(t);
                ode::k_coefficient(lam, p.a, p.b) * x
            }
        }
    }

    pub fn alpha(&self, t: f64, x: f64) -> DVector<f64> {
        &self.direction * self.alpha_scale(t, x)
    }

    /// `α̂` when it does not depend on `(t, x)`.
    pub fn constant_alpha(&self) -> Option<DVector<f64>> {
        match self.kind() {
            CriterionKind::WealthScaledLambda => None,
            _ => Some(self.alpha(self.criterion.t0, self.criterion.x0)),
        }
    }

    pub fn jet(&self, field: Field, t: f64, x: f64) -> Jet {
        let lam = self.lambda();
        let p = self.risk_premium;
        let tau = self.criterion.horizon - t;
        match self.kind() {
            CriterionKind::TerminalWealth => match field {
                Field::Value => Jet {
                    value: x + p * tau / (4.0 * lam),
                    dt: -p / (4.0 * lam),
                    dx: 1.0,
                    dxx: 0.0,
                }
                .scaled(self.value_scale),
                Field::G => Jet {
                    value: x + p * tau / (2.0 * lam),
                    dt: -p / (2.0 * lam),
                    dx: 1.0,
                    dxx: 0.0,
                },
                Field::F | Field::FAt(_) => {
                    let m = x + p * tau / (4.0 * lam);
                    Jet {
                        value: (1.0 - p * tau) * m - lam * x * x,
                        dt: p * m - (1.0 - p * tau) * p / (4.0 * lam),
                        dx: (1.0 - p * tau) - 2.0 * lam * x,
                        dxx: -2.0 * lam,
                    }
                }
            },
            CriterionKind::LogReturn => {
                let d = 1.0 + 2.0 * lam;
                match field {
                    Field::Value => Jet {
                        value: x + p * tau / (2.0 * d),
                        dt: -p / (2.0 * d),
                        dx: 1.0,
                        dxx: 0.0,
                    }
                    .scaled(self.value_scale),
                    Field::G => {
                        let c = (2.0 * lam + 0.5) / (d * d) * p;
                        Jet {
                            value: x + c * tau,
                            dt: -c,
                            dx: 1.0,
                            dxx: 0.0,
                        }
                    }
                    Field::F | Field::FAt(_) => {
                        let a = (4.0 * lam * lam + lam) / (d * d) * p;
                        let q = p / d;
                        let r = lam * (2.0 * lam + 0.5).powi(2) / d.powi(3) * p;
                        Jet {
                            value: (1.0 - a * tau) * x - lam * x * x + q * tau * (0.5 - r * tau),
                            dt: a * x - 0.5 * q + 2.0 * q * r * tau,
                            dx: 1.0 - a * tau - 2.0 * lam * x,
                            dxx: -2.0 * lam,
                        }
                    }
                }
            }
            CriterionKind::WealthScaledLambda => {
                let ab = self.ode.as_ref().expect("ODE grid present").eval(t);
                match field {
                    Field::Value => {
                        let c = ab.a + lam * (ab.a * ab.a - ab.b);
                        let c_t = ab.a_t + lam * (2.0 * ab.a * ab.a_t - ab.b_t);
                        Jet {
                            value: c * x,
                            dt: c_t * x,
                            dx: c,
                            dxx: 0.0,
                        }
                        .scaled(self.value_scale)
                    }
                    Field::G => Jet {
                        value: ab.a * x,
                        dt: ab.a_t * x,
                        dx: ab.a,
                        dxx: 0.0,
                    },
                    Field::F => Jet {
                        value: (ab.a - lam * ab.b) * x,
                        dt: (ab.a_t - lam * ab.b_t) * x,
                        dx: ab.a - lam * ab.b,
                        dxx: 0.0,
                    },
                    Field::FAt(y) => {
                        let ly = lam / y;
                        Jet {
                            value: ab.a * x - ly * ab.b * x * x,
                            dt: ab.a_t * x - ly * ab.b_t * x * x,
                            dx: ab.a - 2.0 * ly * ab.b * x,
                            dxx: -2.0 * ly * ab.b,
                        }
                    }
                }
            }
        }
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.jet(Field::Value, t, x).value
    }

    pub fn g(&self, t: f64, x: f64) -> f64 {
        self.jet(Field::G, t, x).value
    }

    pub fn f(&self, t: f64, x: f64) -> f64 {
        self.jet(Field::F, t, x).value
    }

    /// `V − f − λ(x) g²`, zero for a consistent solution.
    pub fn identity_gap(&self, t: f64, x: f64) -> f64 {
        let g = self.g(t, x);
        self.value(t, x) - self.f(t, x) - self.criterion.lambda_at(x) * g * g
    }

    /// `α̂ᵀJ_l ∈ [0, 1]` per compound Poisson type, checked at `(t₀, x₀)`.
    fn check_non_bankruptcy(&self) -> Vec<NonBankruptcyFlag> {
        let Some(JumpSpec::CompoundPoisson(cp)) = &self.theta_hat().jump else {
            return Vec::new();
        };
        let alpha = self.alpha(self.criterion.t0, self.criterion.x0);
        let scale = match self.kind() {
            // exposures of a dollar strategy are relative to wealth
            CriterionKind::WealthScaledLambda => 1.0 / self.criterion.x0,
            _ => 1.0,
        };
        (0..cp.n_types())
            .filter_map(|l| {
                let e = alpha.dot(&cp.loadings.column(l)) * scale;
                (!(0.0..=1.0).contains(&e)).then_some(NonBankruptcyFlag {
                    jump_type: l,
                    exposure: e,
                })
            })
            .collect()
    }
}

fn worst_case_for(set: &UncertaintySet, criterion: &Criterion, method: Method, cfg: &NumericConfig) -> Result<WorstCaseResult> {
    solve_worst_case(set, criterion, method, cfg)
}

fn require_kind(criterion: &Criterion, kind: CriterionKind) -> Result<()> {
    if criterion.kind != kind {
        return Err(Error::InvalidParameter(format!(
            "expected a {kind:?} criterion, got {:?}",
            criterion.kind
        )));
    }
    Ok(())
}

/// Terminal-wealth solution on a jump-free set.
pub fn solve_terminal_wealth(set: &UncertaintySet, criterion: &Criterion) -> Result<ClosedFormSolution> {
    require_kind(criterion, CriterionKind::TerminalWealth)?;
    if set.jump_bounds.is_some() {
        return Err(Error::InvalidParameter("set carries jumps; use solve_compound_poisson".into()));
    }
    let wc = worst_case_for(set, criterion, Method::Auto, &NumericConfig::default())?;
    ClosedFormSolution::from_worst_case(*criterion, wc, &OdeConfig::default())
}

pub fn solve_log_return(set: &UncertaintySet, criterion: &Criterion) -> Result<ClosedFormSolution> {
    require_kind(criterion, CriterionKind::LogReturn)?;
    let wc = worst_case_for(set, criterion, Method::Auto, &NumericConfig::default())?;
    ClosedFormSolution::from_worst_case(*criterion, wc, &OdeConfig::default())
}

/// Terminal wealth with compound Poisson jumps: the jump-free formulas on
/// `(b̂_F, Σ̂_F)`, with the worst case found numerically over the joint set.
pub fn solve_compound_poisson(
    set: &UncertaintySet,
    criterion: &Criterion,
    cfg: &NumericConfig,
) -> Result<ClosedFormSolution> {
    require_kind(criterion, CriterionKind::TerminalWealth)?;
    match set.jump_bounds.as_ref().map(|j| &j.base) {
        Some(JumpSpec::CompoundPoisson(_)) => {}
        _ => {
            return Err(Error::InvalidParameter(
                "solve_compound_poisson needs compound Poisson jump bounds".into(),
            ))
        }
    }
    let wc = worst_case_for(set, criterion, Method::Numeric, cfg)?;
    ClosedFormSolution::from_worst_case(*criterion, wc, &OdeConfig::default())
}

/// Risk aversion `λ/x`, with or without jumps.
pub fn solve_wealth_scaled(
    set: &UncertaintySet,
    criterion: &Criterion,
    cfg: &NumericConfig,
    ode_cfg: &OdeConfig,
) -> Result<ClosedFormSolution> {
    require_kind(criterion, CriterionKind::WealthScaledLambda)?;
    let wc = worst_case_for(set, criterion, Method::Auto, cfg)?;
    ClosedFormSolution::from_worst_case(*criterion, wc, ode_cfg)
}

/// Dispatches on the criterion and on the presence of jumps.
pub fn solve(
    set: &UncertaintySet,
    criterion: &Criterion,
    method: Method,
    cfg: &NumericConfig,
    ode_cfg: &OdeConfig,
) -> Result<ClosedFormSolution> {
    let wc = worst_case_for(set, criterion, method, cfg)?;
    ClosedFormSolution::from_worst_case(*criterion, wc, ode_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CompoundPoisson, JumpBounds, JumpSizeLaw};
    use proptest::prelude::*;

    fn point_set(b: f64, s: f64) -> UncertaintySet {
        let sc = Scenario::from_vols(
            DVector::from_element(1, b),
            &DVector::from_element(1, s),
            &DMatrix::identity(1, 1),
            None,
        )
        .unwrap();
        UncertaintySet::point(&sc).unwrap()
    }

    fn crit(kind: CriterionKind, lambda: f64) -> Criterion {
        Criterion::new(kind, lambda, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn single_asset_terminal_wealth() {
        let sol = solve_terminal_wealth(&point_set(0.08, 0.2), &crit(CriterionKind::TerminalWealth, 1.0)).unwrap();
        assert!((sol.risk_premium - 0.16).abs() < 1e-15);
        assert!((sol.alpha(0.0, 1.0)[0] - 1.0).abs() < 1e-14);
        assert!((sol.value(0.0, 1.0) - 1.04).abs() < 1e-14);
        assert!((sol.g(0.0, 1.0) - 1.08).abs() < 1e-14);
    }

    #[test]
    fn terminal_conditions() {
        for kind in [CriterionKind::TerminalWealth, CriterionKind::LogReturn] {
            let sol = solve(
                &point_set(0.08, 0.2),
                &crit(kind, 1.5),
                Method::Auto,
                &NumericConfig::default(),
                &OdeConfig::default(),
            )
            .unwrap();
            for x in [-1.0, 0.3, 2.0] {
                assert_eq!(sol.value(1.0, x), x);
                assert_eq!(sol.g(1.0, x), x);
                assert!((sol.f(1.0, x) - (x - 1.5 * x * x)).abs() < 1e-15);
            }
        }
        let sol = solve(
            &point_set(0.08, 0.2),
            &crit(CriterionKind::WealthScaledLambda, 1.5),
            Method::Auto,
            &NumericConfig::default(),
            &OdeConfig::default(),
        )
        .unwrap();
        for x in [0.3, 2.0] {
            assert_eq!(sol.g(1.0, x), x);
            assert!((sol.f(1.0, x) - (x - 1.5 * x)).abs() < 1e-15);
        }
    }

    #[test]
    fn log_return_alpha_and_limit() {
        let sol = solve_log_return(&point_set(0.08, 0.2), &crit(CriterionKind::LogReturn, 1.0)).unwrap();
        assert!((sol.alpha(0.0, 0.0)[0] - 2.0 / 3.0).abs() < 1e-14);
        let mut prev = f64::INFINITY;
        for lam in [1.0, 10.0, 100.0] {
            let a = solve_log_return(&point_set(0.08, 0.2), &crit(CriterionKind::LogReturn, lam))
                .unwrap()
                .alpha(0.0, 0.0)[0];
            assert!(a < prev && a > 0.0);
            prev = a;
        }
    }

    fn cp_set(mu: f64) -> UncertaintySet {
        let law = JumpSizeLaw::TwoPoint { low: 0.0, high: 0.2, p_high: 0.5 };
        let cp = CompoundPoisson::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DVector::from_element(1, mu),
            vec![law],
        )
        .unwrap();
        let sc = Scenario::new(
            DVector::from_vec(vec![0.1, 0.05]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.0625])),
            None,
        )
        .unwrap();
        UncertaintySet::point(&sc)
            .unwrap()
            .with_jump_bounds(Some(JumpBounds {
                base: JumpSpec::CompoundPoisson(cp),
                rate_lo: DVector::from_element(1, mu),
                rate_hi: DVector::from_element(1, mu),
            }))
            .unwrap()
    }

    #[test]
    fn compound_poisson_value() {
        let sol = solve_compound_poisson(&cp_set(0.5), &crit(CriterionKind::TerminalWealth, 1.0), &NumericConfig::default()).unwrap();
        // b_F = (0.15, 0.05), Σ_F = diag(0.05, 0.0625)
        let pf: f64 = 0.15 * 0.15 / 0.05 + 0.05 * 0.05 / 0.0625;
        assert!((pf - 0.49).abs() < 1e-15);
        assert!((sol.risk_premium - pf).abs() < 1e-14);
        assert!((sol.value(0.0, 1.0) - (1.0 + 0.25 * pf)).abs() < 1e-14);
    }

    #[test]
    fn non_bankruptcy_flag() {
        let ok = solve_compound_poisson(&cp_set(0.5), &crit(CriterionKind::TerminalWealth, 2.0), &NumericConfig::default()).unwrap();
        assert!(ok.non_bankruptcy.is_empty());
        // α̂ᵀJ = 3/(2λ) here, so flags stop at λ = 1.5
        let flagged = |lam: f64| {
            !solve_compound_poisson(&cp_set(0.5), &crit(CriterionKind::TerminalWealth, lam), &NumericConfig::default())
                .unwrap()
                .non_bankruptcy
                .is_empty()
        };
        let (mut lo, mut hi) = (1e-3, 10.0);
        assert!(flagged(lo) && !flagged(hi));
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if flagged(mid) {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((lo - 1.5).abs() < 1e-9);
    }

    #[test]
    fn zero_jump_rate_limit_matches_diffusion() {
        let a = solve_compound_poisson(&cp_set(1e-300), &crit(CriterionKind::TerminalWealth, 1.0), &NumericConfig::default()).unwrap();
        let sc = Scenario::new(
            DVector::from_vec(vec![0.1, 0.05]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.0625])),
            None,
        )
        .unwrap();
        let b = solve_terminal_wealth(&UncertaintySet::point(&sc).unwrap(), &crit(CriterionKind::TerminalWealth, 1.0)).unwrap();
        assert_eq!(a.value(0.0, 1.0), b.value(0.0, 1.0));
        assert_eq!(a.alpha(0.0, 1.0), b.alpha(0.0, 1.0));
    }

    #[test]
    fn wealth_scaled_zero_premium() {
        let sol = solve(
            &point_set(0.0, 0.2),
            &crit(CriterionKind::WealthScaledLambda, 1.0),
            Method::Auto,
            &NumericConfig::default(),
            &OdeConfig::default(),
        )
        .unwrap();
        let g = sol.ode.as_ref().unwrap();
        assert!(g.a.iter().chain(&g.b).all(|v| *v == 1.0));
        assert_eq!(sol.alpha(0.3, 2.0)[0], 0.0);
    }

    #[test]
    fn wealth_scaled_f_forms_agree() {
        let sol = solve(
            &point_set(0.1, 0.05f64.sqrt()),
            &crit(CriterionKind::WealthScaledLambda, 1.0),
            Method::Auto,
            &NumericConfig::default(),
            &OdeConfig::default(),
        )
        .unwrap();
        for (t, x) in [(0.0, 1.0), (0.37, 2.5), (0.9, 0.2)] {
            let a = sol.jet(Field::F, t, x).value;
            let b = sol.jet(Field::FAt(x), t, x).value;
            assert!((a - b).abs() < 1e-14 * (1.0 + a.abs()));
            assert!(sol.identity_gap(t, x).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn identity_and_linear_value(
            b in 0.01f64..0.3, s in 0.05f64..0.5, lam in 0.1f64..5.0,
            t in 0.0f64..1.0, x in -3.0f64..3.0,
        ) {
            for kind in [CriterionKind::TerminalWealth, CriterionKind::LogReturn] {
                let sol = solve(&point_set(b, s), &crit(kind, lam), Method::Auto,
                    &NumericConfig::default(), &OdeConfig::default()).unwrap();
                prop_assert!(sol.identity_gap(t, x).abs() <= 1e-12 * (1.0 + x * x));
                let slope = match kind {
                    CriterionKind::TerminalWealth => sol.risk_premium / (4.0 * lam),
                    _ => sol.risk_premium / (2.0 * (1.0 + 2.0 * lam)),
                };
                let gain = sol.value(t, x) - x;
                prop_assert!(gain >= 0.0);
                prop_assert!((gain - slope * (1.0 - t)).abs() <= 1e-14 * (1.0 + x.abs()));
                prop_assert_eq!(sol.alpha(t, x), sol.alpha(0.0, 0.0));
            }
        }
    }
}
