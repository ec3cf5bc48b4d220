//! Deterministic pseudo-random numbers.
//!
//! All randomness in the crate comes from [`Prng`], a xoshiro256** generator
//! whose 256-bit state is expanded from a 64-bit seed with SplitMix64:
//!
//! ```text
//! splitmix64:  s += 0x9E3779B97F4A7C15
//!              z = s
//!              z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!              z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!              return z ^ (z >> 31)
//!
//! xoshiro256**: out = rotl(s1 * 5, 7) * 9
//!               t = s1 << 17
//!               s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
//!               s2 ^= t;  s3 = rotl(s3, 45)
//! ```
//!
//! Floats are derived from the raw 64-bit outputs with fixed formulas (see the
//! individual methods) so that streams can be reproduced in any language.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

/// Seed for a [`Prng`] stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Derives an independent child seed, e.g. one per trial of an experiment.
    pub fn derive(self, index: u64) -> RngSeed {
        let mut rng = Prng::new(RngSeed(self.0 ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)));
        RngSeed(rng.next_u64())
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

#[derive(Debug, Clone)]
pub struct Prng {
    inner: Xoshiro256StarStar,
}

impl Prng {
    pub fn new(seed: RngSeed) -> Self {
        Prng {
            inner: Xoshiro256StarStar::seed_from_u64(seed.0),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`: `(next_u64() >> 11) * 2^-53`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`: `lo + (hi - lo) * next_f64()`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller, consuming two outputs per sample:
    /// `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Integer in `[0, bound)` by 128-bit multiply-high of one output.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "below() needs a positive bound");
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle, walking from the back: for `i` in `(1..len).rev()`
    /// swap `i` with `below(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
