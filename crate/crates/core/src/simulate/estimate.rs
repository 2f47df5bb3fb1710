//! Mean-variance functional estimates from terminal values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::linalg::pairwise_sum;
use crate::model::Criterion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JEstimate {
    pub j_hat: f64,
    pub mean_hat: f64,
    /// Unbiased sample variance.
    pub var_hat: f64,
    /// Delta-method standard error of `j_hat`.
    pub standard_error_j: f64,
    pub standard_error_mean: f64,
    pub lambda: f64,
    pub n_paths: usize,
}

/// `mean − λ·variance` with its delta-method standard error. The error is
/// zero when the sample is constant.
pub fn estimate_values(values: &[f64], lambda: f64) -> Result<JEstimate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 values, got {n}")));
    }
    let nf = n as f64;
    let mean = pairwise_sum(values) / nf;
    let mut buf: Vec<f64> = values.iter().map(|x| (x - mean).powi(2)).collect();
    let m2 = pairwise_sum(&buf) / nf;
    for (b, x) in buf.iter_mut().zip(values) {
        *b = (x - mean).powi(3);
    }
    let m3 = pairwise_sum(&buf) / nf;
    for (b, x) in buf.iter_mut().zip(values) {
        *b = (x - mean).powi(4);
    }
    let m4 = pairwise_sum(&buf) / nf;
    let var = m2 * nf / (nf - 1.0);
    let v_if = (m2 - 2.0 * lambda * m3 + lambda * lambda * (m4 - m2 * m2)).max(0.0);
    Ok(JEstimate {
        j_hat: mean - lambda * var,
        mean_hat: mean,
        var_hat: var,
        standard_error_j: (v_if / nf).sqrt(),
        standard_error_mean: (m2 / nf).sqrt(),
        lambda,
        n_paths: n,
    })
}

/// Uses `λ(x₀)`, so the wealth-scaled criterion gets `λ/x₀`.
pub fn estimate_j(terminal: &[f64], criterion: &Criterion) -> Result<JEstimate> {
    estimate_values(terminal, criterion.lambda_at(criterion.x0))
}

/// Per-sample influence values of `mean − λ·var`; their sample standard
/// deviation over `√n` is the standard error above.
pub fn influence(values: &[f64], est: &JEstimate, out: &mut Vec<f64>) {
    out.clear();
    let (m, v, lam) = (est.mean_hat, est.var_hat, est.lambda);
    out.extend(values.iter().map(|x| {
        let d = x - m;
        d - lam * (d * d - v)
    }));
}

/// Standard error of the mean of `a − b` for paired samples.
pub fn paired_se(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = pairwise_sum(&diff) / n;
    let sq: Vec<f64> = diff.iter().map(|d| (d - m).powi(2)).collect();
    (pairwise_sum(&sq) / (n - 1.0) / n).sqrt()
}
