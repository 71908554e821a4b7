//! Counter-based random streams.
//!
//! A stream is identified by `(seed, stream_id)`; the `n`-th draw is a pure
//! function of `(seed, stream_id, n)`. Consumers derive child streams with
//! [`RngStream::substream`] so that, for example, the proposal draw of
//! particle `n` at step `t` never depends on how many draws any other
//! particle or any other consumer made.
//!
//! The generator is SplitMix64 applied to a per-stream key plus the counter.
//! Gaussian draws use the Box–Muller cosine branch on two fresh uniforms
//! (the sine branch is discarded so a draw never carries hidden state).

use crate::error::{invalid, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_GAMMA: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known stream tags. Each consumer owns one so their draws are disjoint.
pub mod tags {
    pub const SIMULATE: u64 = 1;
    pub const PROPOSE: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const PMMH_PROPOSAL: u64 = 4;
    pub const PMMH_ACCEPT: u64 = 5;
    pub const PMMH_SMC: u64 = 6;
    pub const ADAPT: u64 = 7;
    pub const INIT: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const SMC_RUN: u64 = 10;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN_GAMMA).wrapping_add(stream_id.wrapping_mul(STREAM_GAMMA)));
        Self {
            seed,
            stream_id,
            counter: 0,
            key,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Child stream keyed by `index`, starting at counter zero. Does not
    /// advance `self`.
    pub fn substream(&self, index: u64) -> RngStream {
        let id = mix64(self.stream_id.wrapping_add(GOLDEN_GAMMA) ^ mix64(index.wrapping_add(STREAM_GAMMA)));
        RngStream::new(self.seed, id)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller (two uniforms per draw).
    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        // 1 - u keeps the argument of ln in (0, 1]
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> Result<f64> {
        if !(std > 0.0) || !std.is_finite() {
            return invalid(format!("normal: std must be positive and finite, got {std}"));
        }
        Ok(mean + std * self.std_normal())
    }

    /// Index in `0..n` drawn proportionally to `probs` (need not be normalized).
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let u = self.uniform01() * total;
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // rounding can leave u == total; fall back to the last positive entry
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }
}
