//! Seeded, splittable random streams.
//!
//! Every consumer of randomness (initialization, shuffling, dropout, data
//! synthesis) derives its own ChaCha stream from the run seed, so the values
//! drawn by one consumer never depend on how much another one consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Synth = 4,
    Sampling = 5,
}

/// Generator for `(seed, family, index)`.
pub fn stream(seed: u64, family: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((family as u64) << 48) ^ index);
    rng
}
