//! Seed derivation.
//!
//! Every random stream in the crate is keyed by a base seed plus a path of
//! integers (round, head, item, ...), so results never depend on the order in
//! which streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`, one splitmix round per part.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}

/// Stream tags, so that sibling streams keyed by the same path stay independent.
pub mod tag {
    pub const BURN_IN: u64 = 1;
    pub const PROPOSE: u64 = 2;
    pub const SCORE: u64 = 3;
    pub const RANDOM_PICK: u64 = 4;
    pub const INIT: u64 = 5;
    pub const ORACLE: u64 = 6;
    pub const GROUND_TRUTH: u64 = 7;
    pub const HOLDOUT: u64 = 8;
}
