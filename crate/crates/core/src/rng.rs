//! Named random sub-streams.
//!
//! Every random draw in a run flows from one experiment seed. Each consumer
//! gets its own ChaCha stream keyed by `(seed, stream, index)`, so adding or
//! removing draws in one consumer never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Consumers of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    ArenaNoise = 1,
    Variation = 2,
    ModelInit = 3,
    ModelBatching = 4,
    MemberChoice = 5,
    /// Hidden parameters of the surrogate twist field (keyed by the master seed).
    Surrogate = 6,
}

/// Builds the generator for `(seed, stream, index)`.
pub fn substream(seed: u64, stream: Stream, index: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index as u64);
    rng
}
