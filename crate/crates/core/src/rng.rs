//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a run seed
//! and a stream id (trial index, epoch, probe batch, ...). Work can therefore be
//! split across threads without changing any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids reserved for distinct purposes under the same seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const DIRECTION: u64 = 5;
    pub const PROBES: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    /// Per-epoch shuffles use `SHUFFLE_BASE + epoch`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
    /// Per-trial escape streams use `TRIAL_BASE + trial`.
    pub const TRIAL_BASE: u64 = 1 << 40;
}
