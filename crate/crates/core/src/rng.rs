//! Seeded random streams.
//!
//! Every stochastic component draws from xoshiro256** seeded through
//! splitmix64 (`Xoshiro256StarStar::seed_from_u64`). Uniform reals are built
//! from the top 53 bits of one output word, so a sequence produced here can be
//! reproduced bit-for-bit by any other implementation of the same generator.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

/// A named, seeded PRNG stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: Xoshiro256StarStar,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a named site (e.g. a dropout layer)
    /// from a global seed. The derivation is stable across platforms.
    pub fn derived(seed: u64, name: &str) -> Self {
        Self::new(seed ^ fnv1a(name.as_bytes()).rotate_left(17))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`: `(x >> 11) * 2^-53`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (n > 0), by rejection to avoid modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.inner.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle driven by [`RngStream::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Inverse-transform categorical draw over `weights` (assumed to sum to 1).
    /// Returns the first index whose cumulative sum exceeds the uniform draw;
    /// zero-weight entries are never returned.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last_nonzero = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_nonzero = i;
                if u < acc {
                    return i;
                }
            }
        }
        // rounding left u >= sum; fall back to the last reachable entry
        last_nonzero
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
