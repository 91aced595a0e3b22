//! Seeded noise generation and perturbed scores.
//!
//! Every random quantity in an auction is a vector of independent
//! Gumbel(0, 1) draws. Streams are keyed by `(seed, trial, segment)`: the
//! root seed expands into a ChaCha8 key, the trial index selects the ChaCha
//! stream, and the segment index selects a word offset of `segment << 40`
//! inside that stream. Any trial/segment can therefore be regenerated in
//! isolation, and parallel workers never share generator state.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::AuctionError;

/// Word offset between consecutive segments of one trial stream.
const SEGMENT_STRIDE_WORDS: u128 = 1 << 40;

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub trial: u64,
    pub segment: u64,
}

impl RngStream {
    pub fn new(seed: u64, trial: u64, segment: u64) -> Self {
        Self { seed, trial, segment }
    }

    /// Builds the generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.trial);
        rng.set_word_pos(self.segment as u128 * SEGMENT_STRIDE_WORDS);
        rng
    }
}

/// Uniform draw on the open interval (0, 1) from 53 random bits.
#[inline]
pub fn open_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF transform; `u` is clamped away from {0, 1} so the result is finite.
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    -(-u.ln()).ln()
}

/// One Gumbel(0, 1) draw.
#[inline]
pub fn gumbel<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    gumbel_from_uniform(open_uniform(rng))
}

/// `q * b * e^eps`, or 0 when `q * b == 0`.
pub fn perturbed_score(q: f64, b: f64, eps: f64) -> f64 {
    let base = q * b;
    if base <= 0.0 {
        0.0
    } else {
        (base.ln() + eps).exp()
    }
}

/// `ln q + ln b + eps`; ads with `q * b == 0` map to negative infinity so they
/// never win and never set a price.
#[inline]
pub fn log_score(weight: f64, eps: f64) -> f64 {
    if weight > 0.0 {
        weight.ln() + eps
    } else {
        f64::NEG_INFINITY
    }
}

/// The noise vector driving one auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseDraw(Vec<f64>);

impl NoiseDraw {
    pub fn sample<R: RngCore + ?Sized>(rng: &mut R, len: usize) -> Self {
        NoiseDraw((0..len).map(|_| gumbel(rng)).collect())
    }

    /// Wraps explicit noise values, e.g. for replaying an outcome.
    ///
    /// Panics if any value is not finite.
    pub fn from_values(values: Vec<f64>) -> Self {
        assert!(values.iter().all(|e| e.is_finite()), "noise must be finite");
        NoiseDraw(values)
    }

    /// All-zero noise: the perturbed scores equal the base scores.
    pub fn zeros(len: usize) -> Self {
        NoiseDraw(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn expect_len(&self, expected: usize) -> Result<(), AuctionError> {
        if self.0.len() == expected {
            Ok(())
        } else {
            Err(AuctionError::NoiseLength { got: self.0.len(), expected })
        }
    }
}

/// Per-worker chunking of a long sample run, used by the Monte Carlo oracles.
/// Chunk `c` draws from stream `(seed, c, 0)` so the result does not depend on
/// the thread count.
pub(crate) fn chunk_streams(seed: u64, samples: u64, chunks: u64) -> Vec<(RngStream, u64)> {
    let chunks = chunks.max(1).min(samples.max(1));
    let base = samples / chunks;
    let extra = samples % chunks;
    (0..chunks).map(|c| (RngStream::new(seed, c, 0), base + u64::from(c < extra))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_transform_at_one_over_e_is_zero() {
        assert!(gumbel_from_uniform((-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn extreme_uniforms_stay_finite() {
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn perturbed_score_examples() {
        assert_eq!(perturbed_score(1.0, 1.0, 0.0), 1.0);
        assert!((perturbed_score(0.87, 3.0, 0.0) - 2.61).abs() < 1e-12);
        assert_eq!(perturbed_score(0.0, 5.0, 10.0), 0.0);
        // no overflow for large noise when compared in log space
        assert_eq!(log_score(2.0, 800.0), 2f64.ln() + 800.0);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let words = |s: RngStream| {
            let mut r = s.rng();
            (0..4).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        let a = words(RngStream::new(7, 3, 2));
        let b = words(RngStream::new(7, 3, 2));
        let c = words(RngStream::new(7, 3, 1));
        let d = words(RngStream::new(7, 2, 2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn gumbel_moments() {
        // mean γ, variance π²/6; 3σ bounds on 10^6 draws
        let n = 1_000_000u64;
        let mut rng = RngStream::new(11, 0, 0).rng();
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let e = gumbel(&mut rng);
            s += e;
            s2 += e * e;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let gamma = 0.577_215_664_901_532_9;
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        let sigma_mean = (pi2_6 / n as f64).sqrt();
        assert!((mean - gamma).abs() < 3.0 * sigma_mean, "mean {mean}");
        // Var of the sample variance: (μ4 − σ⁴)/n with μ4 = 27/5·σ⁴ for Gumbel
        let sigma_var = ((27.0 / 5.0 - 1.0) * pi2_6 * pi2_6 / n as f64).sqrt();
        assert!((var - pi2_6).abs() < 3.0 * sigma_var, "var {var}");
    }

    #[test]
    fn chunking_covers_all_samples() {
        let c = chunk_streams(1, 1003, 10);
        assert_eq!(c.iter().map(|(_, n)| n).sum::<u64>(), 1003);
        assert_eq!(chunk_streams(1, 3, 10).len(), 3);
    }
}
