//! Named, seed-derived random streams.
//!
//! One global seed drives every random choice (priors, noise, initialization,
//! shuffling). Each consumer asks for its own stream by name so adding a new
//! consumer never perturbs the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        SeedStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, name: &str) -> Rng {
        Rng::seed_from_u64(mix(self.seed, fnv1a(name.as_bytes())))
    }

    /// Stream for one worker (or one item) of a named family.
    pub fn indexed(&self, name: &str, index: u64) -> Rng {
        Rng::seed_from_u64(mix(mix(self.seed, fnv1a(name.as_bytes())), index))
    }

    pub fn child(&self, name: &str) -> SeedStreams {
        SeedStreams::new(mix(self.seed, fnv1a(name.as_bytes())))
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// splitmix64 finalizer over the pair
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
