//! Seed fan-out.
//!
//! A single master seed drives every random choice in a run. Each consumer
//! draws from its own ChaCha8 stream: the key is the master seed and the
//! stream id is the consumer's fixed counter below, so adding a consumer
//! never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Dropout = 3,
    BatchOrder = 4,
    Folds = 5,
    Synthetic = 6,
    Baseline = 7,
}

pub fn rng(master: u64, stream: Stream) -> ChaCha8Rng {
    rng_with_counter(master, stream, 0)
}

/// Stream for repeated sub-tasks of one consumer, e.g. fold `i` of a CV run.
/// The counter occupies the upper 32 bits of the stream id.
pub fn rng_with_counter(master: u64, stream: Stream, counter: u32) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(master);
    r.set_stream(((counter as u64) << 32) | stream as u64);
    r
}
