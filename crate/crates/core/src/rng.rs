//! Deterministic per-realization random streams.
//!
//! Every realization draws from its own ChaCha8 stream whose 64-bit seed is a
//! SplitMix64 mix of the ensemble master seed and the realization index. The
//! seed is what the manifest records, so any single entry can be regenerated
//! without replaying the rest of the ensemble.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator behind every stream.
pub type SomRng = ChaCha8Rng;

/// Stream index reserved for drawing class labels of an ensemble.
pub const LABEL_STREAM: u64 = u64::MAX;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed recorded in the manifest for realization `index`.
pub fn realization_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn seeded(seed: u64) -> SomRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_stream(master_seed: u64, realization_index: u64) -> SomRng {
    seeded(realization_seed(master_seed, realization_index))
}
