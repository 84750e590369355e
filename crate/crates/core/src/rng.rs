//! Seeded, splittable random streams.
//!
//! Every noise site owns a `(seed, stream)` pair; identical pairs replay
//! identical sample sequences regardless of what other sites consumed.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// A stream keyed by this one plus `id`, independent of `self`.
    pub fn child(&self, id: u64) -> Self {
        RngStream {
            seed: mix(self.seed, self.stream),
            stream: id,
        }
    }

    pub fn generator(&self) -> Sampler {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        Sampler { rng }
    }
}

/// Live generator for one [`RngStream`].
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is < 2^-32 for the sizes used here.
        ((self.rng.next_u64() >> 32).wrapping_mul(n as u64) >> 32) as usize
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// splitmix64 finaliser.
pub const fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive combination of two keys.
pub const fn mix(a: u64, b: u64) -> u64 {
    splitmix(splitmix(a) ^ b.rotate_left(17))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_replays() {
        let s = RngStream::new(7, 3);
        let a: alloc::vec::Vec<f64> = (0..16).map({
            let mut g = s.generator();
            move |_| g.normal()
        }).collect();
        let mut g = s.generator();
        for v in a {
            assert_eq!(v.to_bits(), g.normal().to_bits());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(7, 3).generator();
        let mut b = RngStream::new(7, 4).generator();
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn below_stays_in_range() {
        let mut g = RngStream::new(1, 1).generator();
        for n in 1..50 {
            for _ in 0..100 {
                assert!(g.below(n) < n);
            }
        }
    }
}
