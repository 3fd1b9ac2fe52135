//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by the run seed and
//! a task index, so independent tasks never share a stream and results do not
//! depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Task identifiers for the pipeline's stochastic stages.
pub mod task {
    pub const RANDOM_CONCEPTS: u64 = 1 << 32;
    pub const TCAV: u64 = 2 << 32;
    pub const KMEANS: u64 = 3 << 32;
    pub const ACE_RANDOM: u64 = 4 << 32;
}

/// Independent stream for `(seed, task)`.
pub fn substream(seed: u64, task: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}
