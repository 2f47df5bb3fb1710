//! Backward system for the coefficients `A(t)`, `B(t)` of the
//! wealth-scaled risk-aversion solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeConfig {
    /// RK4 step; `None` means `1e-4·(T − t₀)`.
    pub h_ode: Option<f64>,
    /// Upper bound on `A` and `B` before the solve is declared blown up.
    pub a_max: f64,
    /// Tolerance on the step-halving error estimate.
    pub tolerance: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            h_ode: None,
            a_max: 1e6,
            tolerance: 1e-8,
        }
    }
}

/// `k = (A + 2λ(A² − B)) / (2λB)`; the strategy is `k·x·Σ̂_F⁻¹b̂_F`.
pub fn k_coefficient(lambda: f64, a: f64, b: f64) -> f64 {
    (a + 2.0 * lambda * (a * a - b)) / (2.0 * lambda * b)
}

/// `(A_t, B_t)` from `A_t = −kPA` and `B_t = −(2k + k²)PB`.
pub fn rhs(p: f64, lambda: f64, a: f64, b: f64) -> (f64, f64) {
    let k = k_coefficient(lambda, a, b);
    (-k * p * a, -(2.0 * k + k * k) * p * b)
}

/// RK4 grids on an ascending time grid ending at `T` with `A = B = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AbGrid {
    pub t: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub p: f64,
    pub lambda: f64,
    pub step: f64,
    /// Richardson estimate from the half-step rerun.
    pub error_estimate: f64,
}

fn integrate(p: f64, lambda: f64, t0: f64, horizon: f64, steps: usize, a_max: f64) -> Result<AbGrid> {
    let h = (horizon - t0) / steps as f64;
    let mut t = vec![0.0; steps + 1];
    let mut a = vec![0.0; steps + 1];
    let mut b = vec![0.0; steps + 1];
    t[steps] = horizon;
    a[steps] = 1.0;
    b[steps] = 1.0;
    // integrate in s = T − t, where d/ds = −d/dt
    let f = |a: f64, b: f64| {
        let (da, db) = rhs(p, lambda, a, b);
        (-da, -db)
    };
    for i in (0..steps).rev() {
        let (y1, y2) = (a[i + 1], b[i + 1]);
        let (k1a, k1b) = f(y1, y2);
        let (k2a, k2b) = f(y1 + 0.5 * h * k1a, y2 + 0.5 * h * k1b);
        let (k3a, k3b) = f(y1 + 0.5 * h * k2a, y2 + 0.5 * h * k2b);
        let (k4a, k4b) = f(y1 + h * k3a, y2 + h * k3b);
        let na = y1 + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        let nb = y2 + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        t[i] = if i == 0 { t0 } else { horizon - (steps - i) as f64 * h };
        if !(na > 0.0 && na <= a_max && nb > 0.0 && nb <= a_max) {
            return Err(Error::OdeBlowup {
                t: t[i],
                a: na,
                b: nb,
                limit: a_max,
            });
        }
        a[i] = na;
        b[i] = nb;
    }
    Ok(AbGrid {
        t,
        a,
        b,
        p,
        lambda,
        step: h,
        error_estimate: 0.0,
    })
}

/// Integrates at the configured step and at half of it; fails when the
/// Richardson error estimate exceeds the tolerance.
pub fn solve_ab(p: f64, lambda: f64, t0: f64, horizon: f64, cfg: &OdeConfig) -> Result<AbGrid> {
    let span = horizon - t0;
    let h = cfg.h_ode.unwrap_or(1e-4 * span);
    if !(h > 0.0 && h <= span) {
        return Err(Error::InvalidParameter(format!("h_ode must lie in (0, {span}], got {h}")));
    }
    let steps = (span / h).round().max(1.0) as usize;
    let mut coarse = integrate(p, lambda, t0, horizon, steps, cfg.a_max)?;
    let fine = integrate(p, lambda, t0, horizon, 2 * steps, cfg.a_max)?;
    let mut err: f64 = 0.0;
    for i in 0..=steps {
        err = err
            .max((coarse.a[i] - fine.a[2 * i]).abs())
            .max((coarse.b[i] - fine.b[2 * i]).abs());
    }
    let estimate = err / 15.0;
    if estimate > cfg.tolerance {
        return Err(Error::StepTooLarge {
            estimate,
            tolerance: cfg.tolerance,
        });
    }
    coarse.error_estimate = estimate;
    Ok(coarse)
}

/// `(A, B, A_t, B_t)` of the interpolant at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbPoint {
    pub a: f64,
    pub b: f64,
    pub a_t: f64,
    pub b_t: f64,
}

impl AbGrid {
    fn node_slopes(&self, i: usize) -> (f64, f64) {
        rhs(self.p, self.lambda, self.a[i], self.b[i])
    }

    /// Cubic Hermite interpolation with the system's right-hand side as
    /// node slopes. Times outside the grid are clamped.
    pub fn eval(&self, t: f64) -> AbPoint {
        let last = self.t.len() - 1;
        let t = t.clamp(self.t[0], self.t[last]);
        let i = ((t - self.t[0]) / self.step).floor() as usize;
        let i = i.min(last - 1);
        let h = self.t[i + 1] - self.t[i];
        let s = ((t - self.t[i]) / h).clamp(0.0, 1.0);
        let (ma0, mb0) = self.node_slopes(i);
        let (ma1, mb1) = self.node_slopes(i + 1);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        let interp = |y0: f64, y1: f64, m0: f64, m1: f64| {
            (
                h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1,
                (d00 * y0 + d10 * h * m0 + d01 * y1 + d11 * h * m1) / h,
            )
        };
        let (a, a_t) = interp(self.a[i], self.a[i + 1], ma0, ma1);
        let (b, b_t) = interp(self.b[i], self.b[i + 1], mb0, mb1);
        AbPoint { a, b, a_t, b_t }
    }

    /// Largest residual of both equations at interior nodes, with
    /// centered differences standing in for the time derivatives.
    pub fn fd_residual_max(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 1..self.t.len() - 1 {
            let dt = self.t[i + 1] - self.t[i - 1];
            let a_t = (self.a[i + 1] - self.a[i - 1]) / dt;
            let b_t = (self.b[i + 1] - self.b[i - 1]) / dt;
            let (ra, rb) = self.node_slopes(i);
            worst = worst.max((a_t - ra).abs()).max((b_t - rb).abs());
        }
        worst
    }

    pub fn min_value(&self) -> f64 {
        self.a.iter().chain(&self.b).copied().fold(f64::INFINITY, f64::min)
    }
}
