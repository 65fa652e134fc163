use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A seeded, portable random stream. All randomness in the crate flows through
/// explicitly passed values of this type.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for sub-task `index`, derived from the original seed only
    /// (not from the current position), so forks do not depend on consumption order.
    pub fn fork(&self, index: u64) -> Self {
        Self::new(derive_seed(self.seed, index))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn int_range(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, variance: f64) -> f64 {
        mean + variance.sqrt() * self.standard_normal()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index drawn according to nonnegative `weights` (need not be normalized).
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        // round-off: fall back to the last positive weight
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    /// Uniformly random permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.int_range(0, i);
            perm.swap(i, j);
        }
        perm
    }

    /// `k` distinct indices from `0..n`, returned sorted.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut perm = self.permutation(n);
        perm.truncate(k.min(n));
        perm.sort_unstable();
        perm
    }
}

/// SplitMix64 finalizer applied to `seed ^ hash(index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_identical_streams() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
        let mut c = RngStream::new(43);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn forks_are_position_independent() {
        let a = RngStream::new(7);
        let mut b = RngStream::new(7);
        b.uniform();
        assert_eq!(a.fork(3).next_u64(), b.fork(3).next_u64());
        assert_ne!(a.fork(3).next_u64(), a.fork(4).next_u64());
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = RngStream::new(1);
        let mut p = rng.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut rng = RngStream::new(5);
        for _ in 0..1000 {
            assert_eq!(rng.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }
}
