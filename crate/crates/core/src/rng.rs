//! Deterministic, splittable randomness for reproducible experiments.
//!
//! A stream is identified by `(seed, stream_id)`. The seed keys a ChaCha8
//! generator and the stream id selects one of its 2^64 independent streams,
//! so parallel trials take distinct stream ids instead of sharing a generator.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Result};

const INDEX_BITS: u32 = 40;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    /// Stream `index` within `lane`. Lanes separate unrelated uses of one seed
    /// (the two arms of a game, say); `index` must stay below 2^40.
    pub fn lane(seed: u64, lane: u32, index: u64) -> Self {
        assert!(index < 1 << INDEX_BITS, "stream index {index} too large");
        Self::new(seed, (u64::from(lane) << INDEX_BITS) | index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Uniform integer in `[0, n)`.
pub fn sample_uniform_index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<usize> {
    if n == 0 {
        return param_err("cannot sample an index from an empty range");
    }
    Ok(rng.gen_range(0..n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_support() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            assert_eq!(sample_uniform_index(&mut rng, 1).unwrap(), 0);
        }
        assert!(sample_uniform_index(&mut rng, 0).is_err());
    }

    #[test]
    fn same_key_same_sequence() {
        let a: Vec<u64> = (0..32).scan(RngStream::new(9, 4), |r, _| Some(r.next_u64())).collect();
        let b: Vec<u64> = (0..32).scan(RngStream::new(9, 4), |r, _| Some(r.next_u64())).collect();
        let c: Vec<u64> = (0..32).scan(RngStream::new(9, 5), |r, _| Some(r.next_u64())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_over_four() {
        // Each bucket within 3 sigma of 1/4, and chi-square (3 dof) below the
        // 0.999 quantile 16.27.
        let draws = 1_000_000usize;
        let mut rng = RngStream::new(11, 0);
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[sample_uniform_index(&mut rng, 4).unwrap()] += 1;
        }
        let expect = draws as f64 / 4.0;
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        let mut chi2 = 0.0;
        for &c in &counts {
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "{counts:?}");
            chi2 += (c as f64 - expect).powi(2) / expect;
        }
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }
}
