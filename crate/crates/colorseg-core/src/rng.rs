//! Seedable deterministic random numbers.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood's 64-bit finalizer over a
//! Weyl sequence with increment 0x9E3779B97F4A7C15). It is documented here in
//! full so any implementation of this crate's file formats can reproduce the
//! exact streams:
//!
//! ```text
//! next(s): s += 0x9E3779B97F4A7C15
//!          z = s
//!          z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!          z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!          return z ^ (z >> 31)
//! ```
//!
//! The whole state is the single u64 `s`, which makes snapshotting into
//! checkpoints trivial. Normal draws use Box–Muller and always consume two
//! uniforms per value (no cached spare), so the state alone determines every
//! future draw.

use crate::fmath;

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

/// SplitMix64 stream. `Rng::stream(seed, k)` derives independent substreams
/// (per image index, per worker) from one master seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Substream `k` of `seed`: the state is seeded with
    /// `mix(seed) ^ mix((k+1) * GOLDEN)` so distinct (seed, k) pairs land in
    /// well-separated regions of the sequence.
    pub fn stream(seed: u64, k: u64) -> Self {
        Rng {
            state: mix(seed) ^ mix(k.wrapping_add(1).wrapping_mul(GOLDEN)),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1): the top 53 bits scaled by 2^-53.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Fixed-point multiply (Lemire's method
    /// without the rejection step); the bias is < n/2^64 and irrelevant here,
    /// but the draw is a documented pure function of one `next_u64`.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn int_in(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    pub fn coin(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box–Muller (cosine branch). Consumes exactly two
    /// uniforms; the first is shifted into (0, 1] so ln never sees zero.
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Snapshot for checkpoints.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn restore(state: u64) -> Self {
        Rng { state }
    }
}
