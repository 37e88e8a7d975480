//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from the base seed plus a short
//! path of integers (round, member, purpose tag), so results never depend on
//! the order in which streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod tag {
    pub const MEMBER: u64 = 0x6d65_6d62;
    pub const RANDOM_SCORES: u64 = 0x7261_6e64;
    pub const KMEANS: u64 = 0x6b6d_6e73;
    pub const ORACLE: u64 = 0x6f72_636c;
    pub const SPLIT: u64 = 0x7370_6c74;
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a base seed together with a path of integers.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    rng(derive(base, path))
}
