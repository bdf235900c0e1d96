//! Deterministic seed derivation for resampling loops.
//!
//! Every bootstrap iteration draws from its own generator seeded by
//! `(master seed, group key, iteration index)`, so serial and parallel runs
//! consume identical random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(key: &str) -> u64 {
    key.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn derive_seed(master: u64, key: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(key)).wrapping_add(index))
}

pub fn iteration_rng(master: u64, key: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, key, index))
}
