//! Seeded random streams.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by
//! `(seed, stream)`, so changing how much randomness one step consumes never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const DATA: u64 = 1;
pub const SPLIT: u64 = 2;
pub const KMEANS: u64 = 3;
pub const INIT: u64 = 4;
pub const TRAIN: u64 = 5;
pub const TIE_NOISE: u64 = 6;
pub const UNLEARN: u64 = 7;
pub const RELABEL: u64 = 8;
pub const SUBSAMPLE: u64 = 9;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a sub-seed, e.g. one per epoch.
pub fn derive(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
