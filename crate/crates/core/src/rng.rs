//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator
//! addressed by `(seed, stream)`, so results never depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Labels for `derive_seed`, one per consumer.
pub(crate) mod labels {
    pub const INIT: u64 = 1;
    pub const MASKS: u64 = 3;
    pub const ANCHORS: u64 = 4;
    pub const ACQUIRE: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const POINTS: u64 = 7;
    pub const NOISE: u64 = 8;
    pub const TRAIN: u64 = 9;
}
