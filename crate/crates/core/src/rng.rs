//! Seed derivation for reproducible, parallel-safe random streams.
//!
//! Every stochastic operation that fans out (per pattern, per read, per trial)
//! draws from its own ChaCha stream keyed by `(seed, stream id)`, so results do
//! not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SpinRng = ChaCha8Rng;

/// Generator for stream `stream` of the family identified by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SpinRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a tag into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
