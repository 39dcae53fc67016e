//! Seeded, stream-indexed randomness.
//!
//! A [`RngStream`] is identified by `(seed, stream_id)`; identical
//! identifiers yield bit-identical draw sequences across runs and
//! platforms (ChaCha8 is a pure integer counter-based generator, and the
//! normal/beta samplers below are deterministic transforms of its
//! output: ziggurat for the normal, the rand_distr gamma-ratio rejection
//! sampler for the beta).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    /// Child stream with a distinct stream id (for per-env / per-worker use).
    pub fn substream(&self, offset: u64) -> RngStream {
        RngStream::new(self.seed, self.stream_id.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(offset + 1))
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn beta(&mut self, alpha: f64, beta: f64) -> f64 {
        let dist = Beta::new(alpha, beta)
            .unwrap_or_else(|e| panic!("invalid beta parameters ({alpha}, {beta}): {e}"));
        dist.sample(&mut self.rng)
    }

    pub fn gen_range_usize(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.rng.gen_range(0..n)
    }

    /// Fisher-Yates shuffle of indices 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(a.beta(1.5, 1.0).to_bits(), b.beta(1.5, 1.0).to_bits());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 1);
        assert_ne!(a.uniform(), b.uniform());
    }

    #[test]
    fn beta_1_1_is_uniform_by_ks() {
        let mut s = RngStream::new(123, 0);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| s.beta(1.0, 1.0)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = (x - i as f64 / n as f64).abs();
                let hi = (x - (i + 1) as f64 / n as f64).abs();
                lo.max(hi)
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn normal_mean_within_clt_bound() {
        let mut s = RngStream::new(9, 0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| s.normal()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
    }
}
