//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream: the key comes
//! from the job seed and the 64-bit stream id from the consumer role (plus
//! an index for consumers that come in families, such as the per-type mark
//! networks). Two jobs with different seeds, or two roles inside one job,
//! therefore never share random numbers, and results do not depend on how
//! jobs are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role of a random stream inside one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Simulation = 1,
    Init = 2,
    Shuffle = 3,
    Split = 4,
    Lob = 5,
}

pub fn stream(seed: u64, role: Role) -> ChaCha8Rng {
    indexed_stream(seed, role, 0)
}

pub fn indexed_stream(seed: u64, role: Role, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((role as u64) << 32) | index as u64);
    rng
}
