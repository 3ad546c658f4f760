use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded random stream.
///
/// Backed by ChaCha8, whose output for a given seed is fixed across
/// platforms. Every stochastic step in the engine draws from one of these.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Draws an index with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.unit() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }

    /// Independent stream derived from this one, for a fixed purpose.
    pub fn derive(&mut self) -> RngState {
        RngState::new(self.next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_draws_fingerprint() {
        // Recorded fingerprint for seed 42; a change here breaks reproducibility
        // of every stored checkpoint and report.
        let mut rng = RngState::new(42);
        let draws: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        assert_eq!(draws, FINGERPRINT_SEED_42);
    }

    const FINGERPRINT_SEED_42: [u64; 5] = [
        12578764544318200737,
        17529487244874322312,
        7886285670807131020,
        11572758976476374866,
        5323617429756461744,
    ];

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngState::new(9);
        let mut b = RngState::new(9);
        for _ in 0..100 {
            assert_eq!(a.unit().to_bits(), b.unit().to_bits());
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
        assert_ne!(RngState::new(1).next_u64(), RngState::new(2).next_u64());
    }

    #[test]
    fn categorical_respects_zero_weights() {
        let mut rng = RngState::new(1);
        for _ in 0..1000 {
            assert_eq!(rng.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }
}
