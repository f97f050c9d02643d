//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha20 stream (`rand_chacha`)
//! keyed by a 64-bit seed through `SeedableRng::seed_from_u64`. Child
//! seeds are derived with the SplitMix64 finalizer applied to
//! `parent ^ tag * GOLDEN`, so a stream can be split into independent
//! named sub-streams without consuming any of its output. Gaussian draws
//! use `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed from `parent` and a numeric tag.
pub fn child_seed(parent: u64, tag: u64) -> u64 {
    mix64(parent ^ tag.wrapping_add(1).wrapping_mul(GOLDEN))
}

/// Derive a child seed from a string label (FNV-1a of the label as tag).
pub fn named_seed(parent: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    child_seed(parent, h)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
