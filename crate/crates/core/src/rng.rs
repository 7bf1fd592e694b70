//! Named random sub-streams derived from one run seed.
//!
//! Each consumer draws from its own ChaCha stream, so adding draws in one
//! component never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Dropout,
    Sampler,
    Synthetic,
    Bench,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Sampler => 3,
            Stream::Synthetic => 4,
            Stream::Bench => 5,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
