//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use robust_mv::closed_form::solve;
use robust_mv::model::{CompoundPoisson, JumpBounds, JumpSizeLaw};
use robust_mv::worst_case::{Method, NumericConfig};
use robust_mv::{ClosedFormSolution, Criterion, CriterionKind, JumpSpec, OdeConfig, Scenario, UncertaintySet};

pub fn short_second() -> UncertaintySet {
    UncertaintySet::two_asset((0.10, 0.12), (0.02, 0.03), (0.15, 0.2), (0.2, 0.3), (0.4, 0.6)).unwrap()
}

/// Three assets with a correlation hull of two matrices.
pub fn three_asset_hull() -> UncertaintySet {
    let c1 = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 1.0, 0.3, 0.1, 0.3, 1.0]);
    let c2 = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 1.0]);
    UncertaintySet::new(
        DVector::from_vec(vec![0.08, 0.05, 0.03]),
        DVector::from_vec(vec![0.10, 0.07, 0.04]),
        DVector::from_vec(vec![0.15, 0.2, 0.1]),
        DVector::from_vec(vec![0.2, 0.25, 0.15]),
        robust_mv::model::CorrelationSet::Hull(vec![c1, c2]),
        None,
    )
    .unwrap()
}

pub fn compound_poisson_set() -> UncertaintySet {
    let rate = DVector::from_element(1, 0.5);
    let cp = CompoundPoisson::new(
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        rate.clone(),
        vec![JumpSizeLaw::TwoPoint { low: 0.0, high: 0.2, p_high: 0.5 }],
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
            rate_lo: rate.clone(),
            rate_hi: rate,
        }))
        .unwrap()
}

pub fn solved(set: &UncertaintySet, kind: CriterionKind, lambda: f64, method: Method) -> ClosedFormSolution {
    let x0 = if kind == CriterionKind::LogReturn { 0.0 } else { 1.0 };
    let c = Criterion::new(kind, lambda, 1.0, 0.0, x0).unwrap();
    solve(set, &c, method, &NumericConfig::default(), &OdeConfig::default()).unwrap()
}
