//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};

/// Covariance from marginal volatilities and a correlation matrix:
/// `Σ_ij = σ_i σ_j ρ_ij`. Fails when the result cannot be Cholesky-factorized.
pub fn build_covariance(vols: &DVector<f64>, corr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = vols.len();
    dim_check("correlation rows", n, corr.nrows())?;
    dim_check("correlation cols", n, corr.ncols())?;
    for (i, v) in vols.iter().enumerate() {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "volatility {i} must be positive, got {v}"
            )));
        }
    }
    for i in 0..n {
        if (corr[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "correlation diagonal entry {i} is {}, expected 1",
                corr[(i, i)]
            )));
        }
        for j in 0..i {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 {
                return Err(Error::InvalidParameter(
                    "correlation matrix is not symmetric".into(),
                ));
            }
        }
    }
    let sigma = DMatrix::from_fn(n, n, |i, j| vols[i] * vols[j] * corr[(i, j)]);
    ensure_pd(&sigma, "covariance")?;
    Ok(sigma)
}

/// Two-asset correlation matrix `[[1, ρ], [ρ, 1]]`.
pub fn correlation_2x2(rho: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
}

pub fn ensure_pd(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what: format!("{what} (square)"),
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    let sym = (m - m.transpose()).abs().max();
    if sym > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric")));
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} failed Cholesky factorization")))
}

/// `Σ⁻¹ b` through a Cholesky solve.
pub fn solve_pd(sigma: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    dim_check("drift vs covariance", sigma.nrows(), b.len())?;
    let chol = ensure_pd(sigma, "covariance")?;
    Ok(chol.solve(b))
}

/// In-place Cholesky of a row-major `n×n` buffer followed by `bᵀΣ⁻¹b`.
/// Allocation-free; used in the grid search inner loop. Returns `None`
/// when the matrix is not positive definite.
pub(crate) fn quad_form_inv_in_place(b: &[f64], sigma: &mut [f64], n: usize, y: &mut [f64]) -> Option<f64> {
    for j in 0..n {
        let mut d = sigma[j * n + j];
        for k in 0..j {
            d -= sigma[j * n + k] * sigma[j * n + k];
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        sigma[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = sigma[i * n + j];
            for k in 0..j {
                s -= sigma[i * n + k] * sigma[j * n + k];
            }
            sigma[i * n + j] = s / d;
        }
    }
    // forward solve L y = b, then bᵀΣ⁻¹b = |y|²
    let mut acc = 0.0;
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= sigma[i * n + k] * y[k];
        }
        y[i] = s / sigma[i * n + i];
        acc += y[i] * y[i];
    }
    Some(acc)
}

/// Numerical rank via singular values, relative tolerance.
pub(crate) fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > rel_tol * max.max(f64::MIN_POSITIVE)).count()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Pairwise (cascade) summation in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
