//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by a 64-bit seed, with independent streams selected by the
//! stream id, so results never depend on evaluation order.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

/// Tags that separate the purposes a run seed is used for.
pub mod tag {
    pub const INIT: u64 = 0x494e_4954;
    pub const PATHS: u64 = 0x5041_5448;
    pub const MONTE_CARLO: u64 = 0x4d43_5246;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a label.
pub fn derive(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label))
}

/// Generator for stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
