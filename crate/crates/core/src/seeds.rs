//! Deterministic derivation of independent RNG seeds from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `seed`. Distinct part lists give unrelated seeds.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Stream tags so that every consumer of the master seed draws from its own stream.
pub mod tag {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SHIFT: u64 = 3;
    pub const MIX: u64 = 4;
    pub const INIT: u64 = 5;
    pub const LABELED_ORDER: u64 = 6;
    pub const UNLABELED_ORDER: u64 = 7;
    pub const WEAK_LABELED: u64 = 8;
    pub const WEAK_UNLABELED: u64 = 9;
    pub const STRONG: u64 = 10;
    pub const PROTOTYPES: u64 = 11;
    pub const TEST: u64 = 12;
    pub const VALIDATION: u64 = 13;
}

pub fn rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, parts))
}
