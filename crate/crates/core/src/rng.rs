//! Deterministic pseudo-random numbers shared by schedule generation and
//! noise injection.
//!
//! The generator is SplitMix64: a 64-bit counter advanced by the golden-ratio
//! increment `0x9E3779B97F4A7C15`, finalized with the mixer
//! `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31`.
//! Every consumer derives its own stream from `(seed, tag)` so that, for
//! example, flip angles and TRs drawn from the same seed are independent.
//! The constants are fixed so other implementations can reproduce the exact
//! sequence.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags. Each is the ASCII name packed little-endian into a `u64`.
pub mod stream {
    pub const PERLIN: u64 = u64::from_le_bytes(*b"perlin\0\0");
    pub const TR: u64 = u64::from_le_bytes(*b"tr\0\0\0\0\0\0");
    pub const NOISE: u64 = u64::from_le_bytes(*b"noise\0\0\0");
    pub const TARGETS: u64 = u64::from_le_bytes(*b"targets\0");
    pub const PHANTOM: u64 = u64::from_le_bytes(*b"phantom\0");
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream for a `(seed, tag)` pair: the initial counter is
    /// `mix(seed) ^ tag`.
    pub fn stream(seed: u64, tag: u64) -> Self {
        Self::new(mix(seed) ^ tag)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box-Muller; one uniform pair per sample, cosine
    /// branch only.
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }
}
