//! Seed derivation.
//!
//! Every stochastic component gets its own stream derived from the experiment
//! seed and a tuple of integers (component tag, client id, round, ...), so the
//! outcome never depends on the order in which workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used with [`derive_seed`].
pub mod tag {
    pub const SELECTION: u64 = 1;
    pub const ATTACKER_SET: u64 = 2;
    pub const CLIENT_TRAIN: u64 = 3;
    pub const ATTACK_TRAIN: u64 = 4;
    pub const DEFENSE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const DATA: u64 = 7;
    pub const PARTITION: u64 = 8;
    pub const BACKDOOR: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with an ordered list of integers into a new seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
