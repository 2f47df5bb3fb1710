//! Residuals of the verification PDE systems and the saddle structure of
//! the Hamiltonian, evaluated on closed-form solutions.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closed_form::{ClosedFormSolution, Field, Jet};
use crate::error::{Error, Result};
use crate::model::{Coefficients, CriterionKind, Scenario, UncertaintySet, WealthDynamics};
use crate::sampling::ball_point;

/// Generator `ψ_t + ηψ_x + ½‖ξ‖²ψ_xx + Σ f (ψ(x+ζ) − ψ(x) − ζ 1{‖z‖<1} ψ_x)`.
/// `psi_at(y)` returns `ψ(t, y)` at the same time.
pub fn generator(c: &Coefficients, jet: Jet, x: f64, psi_at: &dyn Fn(f64) -> f64) -> f64 {
    jet.dt + c.eta * jet.dx + 0.5 * c.xi_sq * jet.dxx + jump_integral(c, jet, x, psi_at)
}

fn jump_integral(c: &Coefficients, jet: Jet, x: f64, psi_at: &dyn Fn(f64) -> f64) -> f64 {
    c.jumps
        .iter()
        .map(|(zeta, w, small)| {
            let comp = if *small { zeta * jet.dx } else { 0.0 };
            w * (psi_at(x + zeta) - jet.value - comp)
        })
        .sum()
}

/// `‖ξ‖²ψ_x² + Σ f (ψ(x+ζ) − ψ(x))²`, the quadratic-variation operator.
pub fn h_operator(c: &Coefficients, jet: Jet, x: f64, psi_at: &dyn Fn(f64) -> f64) -> f64 {
    let jumps: f64 = c
        .jumps
        .iter()
        .map(|(zeta, w, _)| w * (psi_at(x + zeta) - jet.value).powi(2))
        .sum();
    c.xi_sq * jet.dx * jet.dx + jumps
}

/// The jump part of the generator alone, for a state-space function `psi`.
pub fn jump_operator_value(
    psi: &dyn Fn(f64) -> f64,
    psi_x: f64,
    alpha: &DVector<f64>,
    theta: &Scenario,
    dynamics: WealthDynamics,
    x: f64,
) -> f64 {
    let c = dynamics.coefficients(alpha, theta);
    let jet = Jet {
        value: psi(x),
        dx: psi_x,
        ..Default::default()
    };
    jump_integral(&c, jet, x, psi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

/// Fourth-order central differences. First x-derivatives use
/// `1e-5(1+|x|)`, the second derivative `1e-3(1+|x|)`, time `1e-6(T−t₀)`.
pub fn fd_jet(psi: &dyn Fn(f64, f64) -> f64, t: f64, x: f64, t_lo: f64, t_hi: f64) -> Result<Jet> {
    let ht = 1e-6 * (t_hi - t_lo);
    if t - 2.0 * ht < t_lo || t + 2.0 * ht > t_hi {
        return Err(Error::DerivativeFailure {
            t,
            x,
            reason: format!("time stencil of half-width {} leaves [{t_lo}, {t_hi}]", 2.0 * ht),
        });
    }
    let h1 = 1e-5 * (1.0 + x.abs());
    let h2 = 1e-3 * (1.0 + x.abs());
    let d1 = |f: &dyn Fn(f64) -> f64, c: f64, h: f64| {
        (-f(c + 2.0 * h) + 8.0 * f(c + h) - 8.0 * f(c - h) + f(c - 2.0 * h)) / (12.0 * h)
    };
    let fx = |y: f64| psi(t, y);
    let ft = |s: f64| psi(s, x);
    let value = psi(t, x);
    let dxx = (-fx(x + 2.0 * h2) + 16.0 * fx(x + h2) - 30.0 * value + 16.0 * fx(x - h2) - fx(x - 2.0 * h2))
        / (12.0 * h2 * h2);
    let jet = Jet {
        value,
        dt: d1(&ft, t, ht),
        dx: d1(&fx, x, h1),
        dxx,
    };
    if [jet.dt, jet.dx, jet.dxx].iter().any(|v| !v.is_finite()) {
        return Err(Error::DerivativeFailure {
            t,
            x,
            reason: "non-finite difference quotient".into(),
        });
    }
    Ok(jet)
}

fn field_jet(sol: &ClosedFormSolution, field: Field, t: f64, x: f64, mode: DerivativeMode) -> Result<Jet> {
    match mode {
        DerivativeMode::Analytic => Ok(sol.jet(field, t, x)),
        DerivativeMode::FiniteDifference => fd_jet(
            &|s, y| sol.jet(field, s, y).value,
            t,
            x,
            sol.criterion.t0,
            sol.criterion.horizon,
        ),
    }
}

/// Terms of the saddle objective at `(α, θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaddleTerms {
    pub value: f64,
    /// Sum of absolute values of the additive pieces; sets the tolerance scale.
    pub magnitude: f64,
}

/// `F(α, θ)`: `𝒜V − λℋg` for constant risk aversion and
/// `𝒜f^y + 2(λ/x) g 𝒜g` at `y = x` for `λ(x) = λ/x`.
pub fn saddle_objective(sol: &ClosedFormSolution, alpha: &DVector<f64>, theta: &Scenario, t: f64, x: f64) -> SaddleTerms {
    let dynamics = WealthDynamics::new(sol.kind());
    let c = dynamics.coefficients(alpha, theta);
    let g = sol.jet(Field::G, t, x);
    let g_at = |y: f64| sol.g(t, y);
    match sol.kind() {
        CriterionKind::WealthScaledLambda => {
            let f = sol.jet(Field::FAt(x), t, x);
            let f_at = |y: f64| sol.jet(Field::FAt(x), t, y).value;
            let af = generator(&c, f, x, &f_at);
            let ag = generator(&c, g, x, &g_at);
            let coupling = 2.0 * sol.lambda() / x * g.value * ag;
            SaddleTerms {
                value: af + coupling,
                magnitude: af.abs() + coupling.abs() + f.dt.abs() + g.dt.abs() * g.value.abs(),
            }
        }
        _ => {
            let v = sol.jet(Field::Value, t, x);
            let v_at = |y: f64| sol.value(t, y);
            let av = generator(&c, v, x, &v_at);
            let hg = sol.lambda() * h_operator(&c, g, x, &g_at);
            SaddleTerms {
                value: av - hg,
                magnitude: v.dt.abs() + (c.eta * v.dx).abs() + hg.abs() + (0.5 * c.xi_sq * v.dxx).abs(),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualRow {
    pub t: f64,
    pub x: f64,
    pub eq_id: String,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualTable {
    pub rows: Vec<ResidualRow>,
    pub max_abs: f64,
    /// Largest `|residual|` per equation id, in first-seen order.
    pub by_equation: Vec<(String, f64)>,
}

impl ResidualTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,eq_id,residual\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.t, r.x, r.eq_id, r.residual));
        }
        s
    }

    pub fn max_for(&self, eq_id: &str) -> Option<f64> {
        self.by_equation.iter().find(|(e, _)| e == eq_id).map(|(_, v)| *v)
    }

    /// Largest residual over the PDE equations and terminal conditions,
    /// excluding the identity between `V`, `f` and `g`.
    pub fn max_pde(&self) -> f64 {
        self.by_equation
            .iter()
            .filter(|(e, _)| e != "identity")
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_t: usize,
    pub n_x: usize,
    /// State range; `None` picks a range around `x₀`.
    pub x_range: Option<(f64, f64)>,
    pub mode: DerivativeMode,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_t: 10,
            n_x: 10,
            x_range: None,
            mode: DerivativeMode::Analytic,
        }
    }
}

fn default_x_range(sol: &ClosedFormSolution) -> (f64, f64) {
    let x0 = sol.criterion.x0;
    match sol.kind() {
        CriterionKind::WealthScaledLambda => (0.5 * x0, 1.5 * x0),
        _ => {
            let w = 0.5 * (1.0 + x0.abs());
            (x0 - w, x0 + w)
        }
    }
}

/// Evaluates every equation of the applicable system at `(α̂, θ̂)` on an
/// interior time grid, plus the terminal conditions at `T`.
pub fn residual_grid(sol: &ClosedFormSolution, cfg: &GridConfig) -> Result<ResidualTable> {
    if cfg.n_t == 0 || cfg.n_x == 0 {
        return Err(Error::InvalidParameter("residual grid needs at least one node per axis".into()));
    }
    let (t0, horizon) = (sol.criterion.t0, sol.criterion.horizon);
    let (x_lo, x_hi) = cfg.x_range.unwrap_or_else(|| default_x_range(sol));
    let lam = sol.lambda();
    let theta = sol.theta_hat();
    let dynamics = WealthDynamics::new(sol.kind());
    let xs: Vec<f64> = (0..cfg.n_x)
        .map(|j| {
            if cfg.n_x == 1 {
                x_lo
            } else {
                x_lo + (x_hi - x_lo) * j as f64 / (cfg.n_x - 1) as f64
            }
        })
        .collect();
    let mut rows = Vec::new();
    for i in 0..cfg.n_t {
        let t = t0 + (i + 1) as f64 / (cfg.n_t + 1) as f64 * (horizon - t0);
        for &x in &xs {
            let alpha = sol.alpha(t, x);
            let c = dynamics.coefficients(&alpha, theta);
            let g = field_jet(sol, Field::G, t, x, cfg.mode)?;
            let g_at = |y: f64| sol.g(t, y);
            let ag = generator(&c, g, x, &g_at);
            let mut push = |eq: &str, r: f64| {
                rows.push(ResidualRow {
                    t,
                    x,
                    eq_id: eq.to_string(),
                    residual: r,
                })
            };
            match sol.kind() {
                CriterionKind::WealthScaledLambda => {
                    let f = field_jet(sol, Field::FAt(x), t, x, cfg.mode)?;
                    let f_at = |y: f64| sol.jet(Field::FAt(x), t, y).value;
                    let af = generator(&c, f, x, &f_at);
                    push("sys13_main", af + 2.0 * lam / x * g.value * ag);
                    push("sys13_f", af);
                    push("sys13_g", ag);
                }
                _ => {
                    let v = field_jet(sol, Field::Value, t, x, cfg.mode)?;
                    let f = field_jet(sol, Field::F, t, x, cfg.mode)?;
                    let v_at = |y: f64| sol.value(t, y);
                    let f_at = |y: f64| sol.f(t, y);
                    let av = generator(&c, v, x, &v_at);
                    let af = generator(&c, f, x, &f_at);
                    push("sys5_main", av - lam * h_operator(&c, g, x, &g_at));
                    push("sys5_g", ag);
                    push("sys7_main", af + 2.0 * lam * g.value * ag);
                    push("sys7_f", af);
                }
            }
            push("identity", sol.identity_gap(t, x));
        }
    }
    for &x in &xs {
        let f_terminal = match sol.kind() {
            CriterionKind::WealthScaledLambda => x - lam * x,
            _ => x - lam * x * x,
        };
        let terminal = [
            ("terminal_v", sol.value(horizon, x) - x),
            ("terminal_g", sol.g(horizon, x) - x),
            ("terminal_f", sol.f(horizon, x) - f_terminal),
        ];
        for (eq, r) in terminal {
            rows.push(ResidualRow {
                t: horizon,
                x,
                eq_id: eq.to_string(),
                residual: r,
            });
        }
    }
    let mut by_equation: Vec<(String, f64)> = Vec::new();
    for r in &rows {
        match by_equation.iter_mut().find(|(e, _)| *e == r.eq_id) {
            Some((_, m)) => *m = m.max(r.residual.abs()),
            None => by_equation.push((r.eq_id.clone(), r.residual.abs())),
        }
    }
    let max_abs = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    Ok(ResidualTable {
        rows,
        max_abs,
        by_equation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleViolation {
    /// `alpha` (F(α, θ̂) > ε), `theta` (F(α̂, θ) < −ε) or `saddle` (|F(α̂, θ̂)| > ε).
    pub kind: String,
    pub index: usize,
    pub value: f64,
    pub alpha: Vec<f64>,
    pub theta_drift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleReport {
    pub samples: usize,
    pub seed: u64,
    pub t: f64,
    pub x: f64,
    pub epsilon: f64,
    pub f_saddle: f64,
    pub max_f_alpha: f64,
    pub min_f_theta: f64,
    /// Largest second difference of `F(·, θ̂)` along sampled lines through `α̂`.
    pub max_second_difference: f64,
    pub n_violations: usize,
    /// Worst violators, largest first.
    pub violations: Vec<SaddleViolation>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaddleConfig {
    pub samples: usize,
    pub seed: u64,
    /// `α` is drawn from the ball of radius `radius_factor·‖α̂‖` around `α̂`.
    pub radius_factor: f64,
    /// Evaluation point; `None` uses `(t₀, x₀)`.
    pub point: Option<(f64, f64)>,
    pub max_reported: usize,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            radius_factor: 10.0,
            point: None,
            max_reported: 5,
        }
    }
}

/// Samples `α` around `α̂` and `θ` from the set (plus its corners) and
/// checks `F(α, θ̂) ≤ ε`, `F(α̂, θ) ≥ −ε` and `|F(α̂, θ̂)| ≤ ε`, with
/// `ε = 1e-9·scale`.
pub fn saddle_check(sol: &ClosedFormSolution, set: &UncertaintySet, cfg: &SaddleConfig) -> SaddleReport {
    let (t, x) = cfg.point.unwrap_or((sol.criterion.t0, sol.criterion.x0));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let alpha_hat = sol.alpha(t, x);
    let theta_hat = sol.theta_hat();
    let saddle = saddle_objective(sol, &alpha_hat, theta_hat, t, x);
    let epsilon = 1e-9 * (1.0 + saddle.magnitude);
    let radius = if alpha_hat.norm() > 0.0 {
        cfg.radius_factor * alpha_hat.norm()
    } else {
        1.0
    };

    let mut alphas = vec![alpha_hat.clone()];
    alphas.extend((0..cfg.samples).map(|_| ball_point(&mut rng, &alpha_hat, radius)));
    let mut thetas: Vec<Scenario> = (0..cfg.samples).map(|_| set.sample(&mut rng)).collect();
    thetas.extend(set.corners());

    let mut violations = Vec::new();
    if saddle.value.abs() > epsilon {
        violations.push(SaddleViolation {
            kind: "saddle".into(),
            index: 0,
            value: saddle.value,
            alpha: alpha_hat.iter().copied().collect(),
            theta_drift: theta_hat.drift.iter().copied().collect(),
        });
    }
    let mut max_f_alpha = f64::NEG_INFINITY;
    let mut max_second = f64::NEG_INFINITY;
    for (i, a) in alphas.iter().enumerate() {
        let v = saddle_objective(sol, a, theta_hat, t, x).value;
        max_f_alpha = max_f_alpha.max(v);
        if v > epsilon {
            violations.push(SaddleViolation {
                kind: "alpha".into(),
                index: i,
                value: v,
                alpha: a.iter().copied().collect(),
                theta_drift: theta_hat.drift.iter().copied().collect(),
            });
        }
        let d = a - &alpha_hat;
        let plus = saddle_objective(sol, &(&alpha_hat + &d), theta_hat, t, x).value;
        let minus = saddle_objective(sol, &(&alpha_hat - &d), theta_hat, t, x).value;
        max_second = max_second.max(plus - 2.0 * saddle.value + minus);
    }
    let mut min_f_theta = f64::INFINITY;
    for (i, th) in thetas.iter().enumerate() {
        let v = saddle_objective(sol, &alpha_hat, th, t, x).value;
        min_f_theta = min_f_theta.min(v);
        if v < -epsilon {
            violations.push(SaddleViolation {
                kind: "theta".into(),
                index: i,
                value: v,
                alpha: alpha_hat.iter().copied().collect(),
                theta_drift: th.drift.iter().copied().collect(),
            });
        }
    }
    let n_violations = violations.len();
    violations.sort_by(|a, b| b.value.abs().partial_cmp(&a.value.abs()).unwrap().then(a.index.cmp(&b.index)));
    violations.truncate(cfg.max_reported);
    SaddleReport {
        samples: cfg.samples,
        seed: cfg.seed,
        t,
        x,
        epsilon,
        f_saddle: saddle.value,
        max_f_alpha,
        min_f_theta,
        max_second_difference: max_second,
        n_violations,
        violations,
        passed: n_violations == 0,
    }
}
