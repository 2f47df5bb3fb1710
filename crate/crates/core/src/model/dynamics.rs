use nalgebra::DVector;

use crate::model::criterion::CriterionKind;
use crate::model::jump::JumpAtom;
use crate::model::scenario::Scenario;

/// Maps `(α, θ)` to the coefficients of the controlled state equation.
///
/// Terminal wealth and wealth-scaled risk aversion share the dollar-amount
/// dynamics `dX = αᵀb dt + αᵀσ dW + αᵀz N(dt, dz)`; log return tracks log
/// wealth with `α` as portfolio weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WealthDynamics {
    pub kind: CriterionKind,
}

/// Generator coefficients at a fixed `(α, θ)`.
#[derive(Clone, Debug)]
pub struct Coefficients {
    /// Drift in compensated form: `η + Σ_{‖z‖<1} f ζ`.
    pub eta: f64,
    /// `‖ξ‖²`.
    pub xi_sq: f64,
    /// `(ζ, weight, small)` per atom.
    pub jumps: Vec<(f64, f64, bool)>,
}

impl WealthDynamics {
    pub fn new(kind: CriterionKind) -> Self {
        Self { kind }
    }

    pub fn is_log(&self) -> bool {
        self.kind == CriterionKind::LogReturn
    }

    /// `η(α, θ)` for the continuous part.
    pub fn drift(&self, alpha: &DVector<f64>, scenario: &Scenario) -> f64 {
        let lin = alpha.dot(&scenario.drift);
        if self.is_log() {
            lin - 0.5 * self.diffusion_sq(alpha, scenario)
        } else {
            lin
        }
    }

    /// `‖ξ(α, θ)‖² = αᵀΣα`.
    pub fn diffusion_sq(&self, alpha: &DVector<f64>, scenario: &Scenario) -> f64 {
        (scenario.covariance.clone() * alpha).dot(alpha)
    }

    /// `ζ(x, α, z)`; `None` when a log-wealth jump would wipe out wealth.
    pub fn jump_size(&self, alpha: &DVector<f64>, z: &DVector<f64>) -> Option<f64> {
        let lin = alpha.dot(z);
        if self.is_log() {
            if 1.0 + lin > 0.0 {
                Some(lin.ln_1p())
            } else {
                None
            }
        } else {
            Some(lin)
        }
    }

    pub fn coefficients(&self, alpha: &DVector<f64>, scenario: &Scenario) -> Coefficients {
        let atoms: Vec<JumpAtom> = scenario.jump.as_ref().map(|j| j.atoms()).unwrap_or_default();
        let mut eta = self.drift(alpha, scenario);
        let mut jumps = Vec::with_capacity(atoms.len());
        for a in atoms {
            let zeta = self.jump_size(alpha, &a.z).unwrap_or(f64::NEG_INFINITY);
            if a.small {
                eta += a.weight * zeta;
            }
            jumps.push((zeta, a.weight, a.small));
        }
        Coefficients {
            eta,
            xi_sq: self.diffusion_sq(alpha, scenario),
            jumps,
        }
    }
}
