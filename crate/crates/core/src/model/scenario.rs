use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};
use crate::model::jump::JumpSpec;
use crate::model::linalg::{build_covariance, correlation_2x2, ensure_pd};

/// One point `θ = (b, Σ[, jumps])` of the uncertainty set.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub drift: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub jump: Option<JumpSpec>,
}

impl Scenario {
    pub fn new(drift: DVector<f64>, covariance: DMatrix<f64>, jump: Option<JumpSpec>) -> Result<Self> {
        let n = drift.len();
        if n == 0 {
            return Err(Error::InvalidParameter("scenario needs at least one asset".into()));
        }
        dim_check("covariance rows", n, covariance.nrows())?;
        ensure_pd(&covariance, "scenario covariance")?;
        if drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("scenario drift is not finite".into()));
        }
        if let Some(j) = &jump {
            j.validate(n)?;
        }
        Ok(Self {
            drift,
            covariance,
            jump,
        })
    }

    pub fn from_vols(
        drift: DVector<f64>,
        vols: &DVector<f64>,
        corr: &DMatrix<f64>,
        jump: Option<JumpSpec>,
    ) -> Result<Self> {
        dim_check("volatilities", drift.len(), vols.len())?;
        let cov = build_covariance(vols, corr)?;
        Self::new(drift, cov, jump)
    }

    /// Two-asset scenario from `(b₁, b₂, σ₁, σ₂, ρ)`.
    pub fn two_asset(b1: f64, b2: f64, s1: f64, s2: f64, rho: f64) -> Result<Self> {
        Self::from_vols(
            DVector::from_vec(vec![b1, b2]),
            &DVector::from_vec(vec![s1, s2]),
            &correlation_2x2(rho),
            None,
        )
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn vols(&self) -> DVector<f64> {
        self.covariance.diagonal().map(f64::sqrt)
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        let v = self.vols();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                1.0
            } else {
                self.covariance[(i, j)] / (v[i] * v[j])
            }
        })
    }

    pub fn with_jump(mut self, jump: Option<JumpSpec>) -> Result<Self> {
        if let Some(j) = &jump {
            j.validate(self.dim())?;
        }
        self.jump = jump;
        Ok(self)
    }

    /// Flattened `(b, σ, ρ)` for two-asset reporting.
    pub fn two_asset_coords(&self) -> Option<[f64; 5]> {
        if self.dim() != 2 {
            return None;
        }
        let v = self.vols();
        Some([self.drift[0], self.drift[1], v[0], v[1], self.correlation()[(0, 1)]])
    }
}

/// Jump-adjusted drift `b_F = b + ∫z F(dz)` and second-moment matrix
/// `Σ_F = Σ + ∫z zᵀ F(dz)`. Without jumps this is `(b, Σ)`.
pub fn adjusted_moments(scenario: &Scenario) -> (DVector<f64>, DMatrix<f64>) {
    match &scenario.jump {
        None => (scenario.drift.clone(), scenario.covariance.clone()),
        Some(j) => {
            let (m1, m2) = j.moments();
            (&scenario.drift + m1, &scenario.covariance + m2)
        }
    }
}
