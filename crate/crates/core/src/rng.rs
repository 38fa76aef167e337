//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8, a counter-based stream
//! cipher generator. A run is identified by a `u64` seed; independent
//! sub-streams (one per seed replicate, per grid point, per worker) are
//! obtained by selecting a ChaCha stream id, so results do not depend on the
//! order in which parallel work is scheduled and are identical across
//! platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for `stream` under the run `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed; used when a sub-task needs its own family of streams.
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
