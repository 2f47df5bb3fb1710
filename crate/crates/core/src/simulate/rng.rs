//! Per-path counter-based random streams.
//!
//! Path `p` owns three ChaCha8 streams under the run seed: `3p` for the
//! Gaussian increments, `3p+1` for one uniform per step and jump channel,
//! `3p+2` for jump sizes, addressed by `(step, channel)` so that changing a
//! jump rate never shifts any other draw. Antithetic pairs `(2p, 2p+1)`
//! share the streams of `p` and the second path negates its normals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAMS_PER_PATH: u64 = 3;
/// Word offset reserved for the jump sizes of one `(step, channel)` slot.
const SIZE_SLOT_SHIFT: u32 = 16;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index of the stream triple used by `path` and the sign of its normals.
pub fn stream_owner(path: usize, antithetic: bool) -> (u64, f64) {
    if antithetic {
        ((path / 2) as u64, if path % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        (path as u64, 1.0)
    }
}

pub struct PathRngs {
    pub normals: ChaCha8Rng,
    pub uniforms: ChaCha8Rng,
    pub sizes: ChaCha8Rng,
    pub sign: f64,
}

impl PathRngs {
    pub fn new(seed: u64, path: usize, antithetic: bool) -> Self {
        let (owner, sign) = stream_owner(path, antithetic);
        let base = owner * STREAMS_PER_PATH;
        Self {
            normals: stream_rng(seed, base),
            uniforms: stream_rng(seed, base + 1),
            sizes: stream_rng(seed, base + 2),
            sign,
        }
    }

    /// Positions the size stream at the slot of `(step, channel)`.
    pub fn seek_sizes(&mut self, step: usize, n_channels: usize, channel: usize) {
        let slot = (step * n_channels + channel) as u128;
        self.sizes.set_word_pos(slot << SIZE_SLOT_SHIFT);
    }
}

/// Inverse-CDF Poisson draw with the given mean from a uniform in `[0, 1)`.
pub fn poisson_inverse(mean: f64, u: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let mut k = 0u32;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u >= cdf && k < 10_000 {
        k += 1;
        p *= mean / k as f64;
        if p == 0.0 {
            break;
        }
        cdf += p;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream_rng(7, 0).random();
        let b: u64 = stream_rng(7, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, stream_rng(7, 0).random::<u64>());
    }

    #[test]
    fn antithetic_pairs_share_streams() {
        assert_eq!(stream_owner(4, true), (2, 1.0));
        assert_eq!(stream_owner(5, true), (2, -1.0));
        assert_eq!(stream_owner(5, false), (5, 1.0));
    }

    #[test]
    fn size_slots_do_not_depend_on_history() {
        let mut r1 = PathRngs::new(3, 0, false);
        let mut r2 = PathRngs::new(3, 0, false);
        let _: f64 = r1.sizes.random();
        r1.seek_sizes(10, 2, 1);
        r2.seek_sizes(10, 2, 1);
        assert_eq!(r1.sizes.random::<u64>(), r2.sizes.random::<u64>());
    }

    #[test]
    fn poisson_inverse_matches_cdf() {
        let m = 0.7f64;
        assert_eq!(poisson_inverse(m, 0.0), 0);
        let p0 = (-m).exp();
        assert_eq!(poisson_inverse(m, p0 - 1e-12), 0);
        assert_eq!(poisson_inverse(m, p0 + 1e-12), 1);
        assert_eq!(poisson_inverse(0.0, 0.99), 0);
        // empirical mean
        let n = 200_000;
        let mut rng = stream_rng(1, 0);
        let s: u64 = (0..n).map(|_| poisson_inverse(m, rng.random()) as u64).sum();
        assert!((s as f64 / n as f64 - m).abs() < 0.01);
    }
}
