//! Seed derivation and counter-based randomness.
//!
//! Every random quantity in the crate is a pure function of a 64-bit seed and
//! an index (sample number, tree node), so results never depend on thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `seed`.
#[inline]
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(GOLDEN).wrapping_mul(GOLDEN)))
}

pub fn chacha(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Uniform in [0, 1) from the top 53 bits.
#[inline]
pub fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Incremental 128-bit hash of a symbol sequence. The state after pushing
/// the symbols of a word depends only on that word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordHasher {
    a: u64,
    b: u64,
}

impl Default for WordHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl WordHasher {
    pub const fn new() -> Self {
        Self {
            a: 0x243F_6A88_85A3_08D3,
            b: 0x1319_8A2E_0370_7344,
        }
    }

    #[inline]
    pub fn push(&mut self, symbol: u16) {
        let s = u64::from(symbol) + 1;
        self.a = mix64(self.a ^ s.wrapping_mul(GOLDEN));
        self.b = mix64(self.b.wrapping_add(self.a).rotate_left(23) ^ s.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }

    pub fn finish(&self) -> (u64, u64) {
        (self.a, self.b)
    }
}

/// Counter-based generator keyed by (seed, 128-bit node key).
#[derive(Clone, Debug)]
pub struct CounterRng {
    k0: u64,
    k1: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, key: (u64, u64)) -> Self {
        Self {
            k0: mix64(key.0 ^ mix64(seed)),
            k1: mix64(key.1.wrapping_add(seed.rotate_left(32)) ^ GOLDEN),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter = c.wrapping_add(1);
        mix64(self.k0 ^ mix64(self.k1.wrapping_add(c.wrapping_mul(GOLDEN))))
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }
}
