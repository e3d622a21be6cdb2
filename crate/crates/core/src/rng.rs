//! Seeded random streams.
//!
//! Every consumer of randomness (each population member, each environment,
//! the evolution step, evaluation) draws from its own ChaCha stream derived
//! from the run seed, so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes; the numeric id selects an independent ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Evolution,
    Warmup,
    Init(usize),
    Learner(usize),
    Env(usize),
    Eval { epoch: usize, member: usize },
    Custom(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Evolution => 1,
            Stream::Warmup => 2,
            Stream::Init(i) => (1 << 32) | i as u64,
            Stream::Learner(i) => (2 << 32) | i as u64,
            Stream::Env(i) => (3 << 32) | i as u64,
            Stream::Eval { epoch, member } => (4 << 40) | ((epoch as u64) << 20) | member as u64,
            Stream::Custom(x) => (5 << 48) ^ x,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Derives a 64-bit seed for a sub-component (e.g. an environment instance).
pub fn derive_seed(seed: u64, which: Stream) -> u64 {
    use rand::RngCore;
    stream(seed, which).next_u64()
}
