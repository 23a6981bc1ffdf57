//! Named random sub-streams derived from a single seed.
//!
//! Every consumer of randomness (data generation, weight init, dropout,
//! sampling) draws from its own ChaCha stream so that changing how much one
//! consumer draws never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Schedule = 1,
    Background = 2,
    Init = 3,
    Dropout = 4,
    Shuffle = 5,
    Sampling = 6,
    Baseline = 7,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    substream_indexed(seed, stream, 0)
}

/// Sub-stream with an extra index, e.g. one per stage or per recording.
pub fn substream_indexed(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | (index & 0xffff_ffff));
    rng
}
