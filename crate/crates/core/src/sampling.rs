//! Low-discrepancy and ball sampling helpers.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    out
}

/// Point `index` (starting at 1) of the Halton sequence in `[0, 1)^dim`.
///
/// # Panics
/// When `dim` exceeds the number of tabulated prime bases.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "Halton dimension {dim} above {}", PRIMES.len());
    PRIMES[..dim].iter().map(|p| radical_inverse(index, *p)).collect()
}

/// Uniform draw from the closed ball of `radius` around `center`.
pub fn ball_point<R: Rng + ?Sized>(rng: &mut R, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = center.len();
    let dir: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let norm = dir.norm();
    if norm == 0.0 {
        return center.clone();
    }
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    center + dir * (r / norm)
}
