//! Seeded randomness.
//!
//! [`Rng`] is a ChaCha8 stream keyed by a 64-bit seed. Streams are stable for a
//! given build; no promise is made across dependency upgrades.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// The draws the sampling paths need. Implemented by [`Rng`] and by
/// scripted stand-ins in tests.
pub trait RandomStream {
    /// Uniform draw from `[0, 1)`.
    fn uniform(&mut self) -> f64;
    fn standard_normal(&mut self) -> f64;
    /// Uniform index in `0..n`; `n` must be positive.
    fn index(&mut self, n: usize) -> usize;
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream; `stream` selects which one.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = self.inner.clone();
        inner.set_stream(stream.wrapping_add(1));
        Self { inner }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut self.inner);
        p
    }

    /// `count` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot draw {count} distinct values from {n}");
        let mut p: Vec<usize> = (0..n).collect();
        let (head, _) = p.partial_shuffle(&mut self.inner, count);
        head.to_vec()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

impl RandomStream for Rng {
    fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.inner.random_range(0..n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
        for _ in 0..1000 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(2);
        let same = (0..100).filter(|_| a.uniform() == b.uniform()).count();
        assert!(same < 5);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(7);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut r = Rng::new(3);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn without_replacement_is_distinct() {
        let mut r = Rng::new(9);
        let mut s = r.sample_without_replacement(100, 40);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 40);
        assert!(s.iter().all(|&i| i < 100));
    }

    #[test]
    fn forks_are_deterministic_and_distinct() {
        let base = Rng::new(5);
        let mut a = base.fork(1);
        let mut b = base.fork(1);
        let mut c = base.fork(2);
        let xa: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        let xc: Vec<f64> = (0..8).map(|_| c.uniform()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }
}
