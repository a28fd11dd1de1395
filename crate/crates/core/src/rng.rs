//! Seeded, position-addressable random streams.
//!
//! Every stream is ChaCha8 keyed by a 64-bit seed. The stream position is the
//! number of 64-bit words drawn so far, so `(seed, counter)` fully determines
//! the next value on every platform. Floating-point transforms go through
//! `libm`, which is pure Rust and bit-identical across targets.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed, a domain tag and an index.
///
/// Used to give every individual, population and stream within a run its own
/// independent seed while keeping the whole run a function of one number.
pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(parent ^ mix64(tag)).wrapping_add(index))
}

/// A ChaCha8 stream that tracks how many words it has produced.
#[derive(Clone, Debug)]
pub struct SeededStream {
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0)
    }

    /// Opens the stream of `seed` positioned after `counter` draws.
    pub fn at(seed: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(u128::from(counter) * 2);
        Self { seed, counter, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent stream for a sub-task; does not advance `self`.
    pub fn fork(&self, tag: u64) -> Self {
        Self::new(derive_seed(self.seed, tag, self.counter))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal by Box-Muller; always consumes exactly two words.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn same_seed_same_values() {
        let mut a = SeededStream::new(7);
        let mut b = SeededStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn position_addressable() {
        let mut a = SeededStream::new(99);
        let drawn: Vec<u64> = (0..37).map(|_| a.next_u64()).collect();
        for (i, v) in drawn.iter().enumerate() {
            let mut b = SeededStream::at(99, i as u64);
            assert_eq!(b.next_u64(), *v, "position {i}");
        }
        assert_eq!(a.counter(), 37);
    }

    #[test]
    fn below_stays_in_range() {
        let mut s = SeededStream::new(1);
        for n in 1..50 {
            for _ in 0..20 {
                assert!(s.below(n) < n);
            }
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = SeededStream::new(3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.015, "var {var}");
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 3));
        assert_eq!(derive_seed(5, 6, 7), derive_seed(5, 6, 7));
    }
}
