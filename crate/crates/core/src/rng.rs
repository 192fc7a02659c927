//! Seed derivation. Every random decision in the crate draws from a
//! `ChaCha8Rng` whose seed is derived from the run seed plus a tag path,
//! so results do not depend on call order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stable numeric tags for the different consumers of randomness.
pub mod stream {
    pub const EXAMPLES: u64 = 1;
    pub const SUBSAMPLE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const INTERLEAVE: u64 = 5;
    pub const RESAMPLE: u64 = 6;
    pub const FREE_INPUTS: u64 = 7;
    pub const SYNTH: u64 = 8;
}
