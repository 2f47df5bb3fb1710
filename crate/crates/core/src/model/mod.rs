//! Domain types shared by every solver.

pub mod criterion;
pub mod dynamics;
pub mod jump;
pub mod linalg;
pub mod scenario;
pub mod uncertainty;

pub use criterion::{Criterion, CriterionKind};
pub use dynamics::{Coefficients, WealthDynamics};
pub use jump::{CompoundPoisson, JumpAtom, JumpSizeLaw, JumpSpec, LevyAtom, LevyDiscrete};
pub use linalg::build_covariance;
pub use scenario::{adjusted_moments, Scenario};
pub use uncertainty::{CorrelationSet, JumpBounds, UncertaintySet};

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn jump_adjustment_is_psd(
            mu in 0.01f64..3.0, lo in -0.5f64..0.5, width in 0.0f64..0.5, p in 0.0f64..1.0,
            j0 in 0.0f64..1.0, j1 in 0.0f64..1.0,
        ) {
            prop_assume!(j0 + j1 > 1e-3);
            let law = JumpSizeLaw::TwoPoint { low: lo, high: lo + width, p_high: p };
            let cp = CompoundPoisson::new(
                DMatrix::from_column_slice(2, 1, &[j0, j1]),
                DVector::from_element(1, mu),
                vec![law],
            ).unwrap();
            let s = Scenario::two_asset(0.1, 0.05, 0.2, 0.25, 0.3).unwrap()
                .with_jump(Some(JumpSpec::CompoundPoisson(cp))).unwrap();
            let (_, sf) = adjusted_moments(&s);
            let diff = sf - &s.covariance;
            prop_assert!(linalg::min_eigenvalue(&diff) >= -1e-14);
        }
    }
}
