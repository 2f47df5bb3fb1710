use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    TerminalWealth,
    LogReturn,
    /// Risk aversion `λ(x) = λ/x`.
    WealthScaledLambda,
}

/// The mean-variance problem `E[X_T] − λ(x) Var(X_T)` started at `(t₀, x₀)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Criterion {
    pub kind: CriterionKind,
    pub lambda: f64,
    pub horizon: f64,
    pub t0: f64,
    pub x0: f64,
}

impl Criterion {
    pub fn new(kind: CriterionKind, lambda: f64, horizon: f64, t0: f64, x0: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        if !(horizon.is_finite() && t0.is_finite() && horizon > t0) {
            return Err(Error::InvalidParameter(format!(
                "horizon T={horizon} must exceed t0={t0}"
            )));
        }
        if !x0.is_finite() {
            return Err(Error::InvalidParameter("x0 must be finite".into()));
        }
        if kind == CriterionKind::WealthScaledLambda && x0 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "wealth-scaled risk aversion needs x0 > 0, got {x0}"
            )));
        }
        Ok(Self {
            kind,
            lambda,
            horizon,
            t0,
            x0,
        })
    }

    pub fn terminal_wealth(lambda: f64, horizon: f64) -> Result<Self> {
        Self::new(CriterionKind::TerminalWealth, lambda, horizon, 0.0, 1.0)
    }

    /// Risk aversion at wealth `x`.
    pub fn lambda_at(&self, x: f64) -> f64 {
        match self.kind {
            CriterionKind::WealthScaledLambda => self.lambda / x,
            _ => self.lambda,
        }
    }

    pub fn span(&self) -> f64 {
        self.horizon - self.t0
    }
}
