//! Deterministic, tag-addressed random streams.
//!
//! Every random quantity in the crate is drawn from a [`Stream`] derived from
//! a master seed and a tag `(purpose, k, n)`. The tag words are folded through
//! the SplitMix64 finalizer, and four successive SplitMix64 outputs of the
//! folded value seed a xoshiro256++ generator. Uniform variates use the top
//! 53 bits of each output. Streams never depend on thread scheduling, so any
//! computation that only reads streams by tag is reproducible bit for bit.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// What a stream is used for. The discriminant is part of the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purpose {
    Init = 1,
    Grad = 2,
    Select = 3,
    Data = 4,
    MonteCarlo = 5,
    Trial = 6,
    Sweep = 7,
    Probe = 8,
}

/// Stream address `(purpose, k, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamTag {
    pub purpose: Purpose,
    pub k: u64,
    pub n: u64,
}

impl StreamTag {
    pub const fn new(purpose: Purpose, k: u64, n: u64) -> Self {
        Self { purpose, k, n }
    }
}

/// SplitMix64 output function (Steele, Lea, Flood 2014).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds the master seed and tag words into the 256-bit generator state.
pub fn seed_state(master_seed: u64, words: &[u64]) -> [u64; 4] {
    let mut h = mix64(master_seed ^ GOLDEN_GAMMA);
    for (i, &w) in words.iter().enumerate() {
        let salted = w.wrapping_add(GOLDEN_GAMMA.wrapping_mul(i as u64 + 1));
        h = mix64(h ^ mix64(salted));
    }
    let mut state = [0u64; 4];
    for (j, s) in state.iter_mut().enumerate() {
        *s = mix64(h.wrapping_add(GOLDEN_GAMMA.wrapping_mul(j as u64 + 1)));
    }
    if state == [0; 4] {
        // xoshiro's only forbidden state
        state[0] = GOLDEN_GAMMA;
    }
    state
}

/// A xoshiro256++ stream with draw accounting.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: Xoshiro256PlusPlus,
    draws: u64,
}

impl Stream {
    pub fn from_words(master_seed: u64, words: &[u64]) -> Self {
        let state = seed_state(master_seed, words);
        let mut seed = [0u8; 32];
        for (chunk, word) in seed.chunks_exact_mut(8).zip(state) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self { rng: Xoshiro256PlusPlus::from_seed(seed), draws: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// `+1` or `-1` with equal probability.
    #[inline]
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn fill_uniform(&mut self, lo: f64, hi: f64, out: &mut [f64]) {
        for v in out {
            *v = self.uniform_in(lo, hi);
        }
    }

    /// Number of 64-bit outputs consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

pub fn derive_stream(master_seed: u64, tag: StreamTag) -> Stream {
    Stream::from_words(master_seed, &[tag.purpose as u64, tag.k, tag.n])
}
