//! Named random streams derived from one master seed.
//!
//! Every component draws from its own ChaCha stream so that, for example,
//! changing the policy seed never perturbs vehicle mobility.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Mobility = 1,
    Data = 2,
    Sgd = 3,
    Policy = 4,
    Env = 5,
    Permutation = 6,
    Replicates = 7,
    Game = 8,
}

/// Returns the stream `stream` of master seed `seed`.
pub fn stream(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Child stream for an indexed sub-component (a replicate, a vehicle, a task).
pub fn substream(seed: u64, stream: Stream, index: u64) -> SimRng {
    let mixed = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(stream as u64);
    rng
}
