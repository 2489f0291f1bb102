//! Deterministic fan-out of one master seed into independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a random stream; each maps to its own ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Order = 2,
    Update = 3,
    Environment = 4,
    Policy = 5,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Seed of repetition `rep` under `master` (splitmix64 finalizer).
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    let mut z = master.wrapping_add((rep as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
