//! Deterministic RNG substream derivation.
//!
//! Every random quantity in the crate is drawn from a ChaCha12 stream whose
//! seed is derived from a master seed plus a tag path. Substreams derived
//! from distinct paths never share state, which makes runs reproducible at
//! any parallelism level and lets tests assert independence by construction.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

/// splitmix64 finalizer; full-period bijective mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and one tag.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Derives a seed from a master seed and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut s = master;
    for &t in tags {
        s = mix(s, t);
    }
    s
}

/// A seeded generator for the substream identified by `tags`.
pub fn substream(master: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, tags))
}

/// Fixed tags naming top-level substream roles.
pub mod tag {
    pub const SHUFFLE: u64 = 0x01;
    pub const NOISE: u64 = 0x02;
    pub const TRAIN: u64 = 0x03;
    pub const EVAL: u64 = 0x04;
    pub const PLANT: u64 = 0x05;
    pub const OUTPUT_PICK: u64 = 0x06;
    pub const INIT: u64 = 0x07;
}

// ============================================================================
// Tests
// ============================================================================
