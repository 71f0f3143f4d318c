//! Seed derivation for independent, replayable random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_INITIAL_POOL: u64 = 1;
pub(crate) const STREAM_QUERY: u64 = 2;
pub(crate) const STREAM_SUBSAMPLE: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator that depends only on `(seed, purpose, step)`.
pub(crate) fn stream(seed: u64, purpose: u64, step: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed) ^ splitmix64(purpose.wrapping_mul(0x632B_E59B_D9B4_E019)) ^ step);
    ChaCha8Rng::seed_from_u64(mixed)
}
