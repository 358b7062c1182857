//! Seeded, stream-addressable randomness.
//!
//! Every consumer derives its own stream from `(seed, stream id)`, so draws
//! never depend on the order in which other components consumed randomness.

use rand::seq::index;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, stream, inner }
    }

    /// Stream identified by a path of ids, e.g. `[epoch, batch, purpose]`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let stream = path.iter().fold(0x9e37_79b9_7f4a_7c15u64, |acc, &p| splitmix(acc ^ p));
        Rng::new(seed, stream)
    }

    /// A child stream of this one; independent of how much of `self` was consumed.
    pub fn child(&self, id: u64) -> Self {
        Rng::derive(self.seed, &[self.stream, id])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn open01(&mut self) -> f64 {
        self.inner.sample(Open01)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `k` distinct indices from `0..n` (all of them if `k ≥ n`), in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        index::sample(&mut self.inner, n, k.min(n)).into_vec()
    }

    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.open01().ln() / rate
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = Rng::derive(7, &[1, 2]);
        let mut b = Rng::derive(7, &[1, 2]);
        for _ in 0..10 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::derive(7, &[2, 1]);
        assert_ne!(Rng::derive(7, &[1, 2]).next_u64(), c.next_u64());
    }

    #[test]
    fn child_ignores_parent_consumption() {
        let a = Rng::new(3, 0);
        let mut b = a.clone();
        b.uniform();
        assert_eq!(a.child(5).next_u64(), b.child(5).next_u64());
    }

    #[test]
    fn sample_indices_distinct() {
        let mut r = Rng::new(1, 0);
        let mut s = r.sample_indices(10, 6);
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 6);
        assert_eq!(r.sample_indices(3, 10).len(), 3);
    }
}
