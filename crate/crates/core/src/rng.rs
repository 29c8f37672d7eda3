//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by the run seed plus a small tuple naming its purpose, so streams do
//! not depend on the order in which events happen to consume them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn derive_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, key))
}

/// Stream tags.
pub(crate) mod domain {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SYNC_BATCH: u64 = 3;
    pub const ASYNC_BATCH: u64 = 4;
    pub const LATENCY: u64 = 5;
    pub const STALENESS: u64 = 6;
    pub const MONTE_CARLO: u64 = 7;
}
