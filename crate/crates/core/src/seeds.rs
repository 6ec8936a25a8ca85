//! Deterministic seed derivation. Every random draw in a run comes from a
//! generator seeded by hashing `(run seed, epoch, sample index, stream)`, so
//! results do not depend on scheduling or on how many draws came before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep generators for different purposes independent.
pub mod stream {
    pub const INIT: u64 = 0x1417;
    pub const SHUFFLE: u64 = 0x5f0f;
    pub const AUGMENT: u64 = 0xa06e;
    pub const DATA: u64 = 0xda7a;
    pub const PREVIEW: u64 = 0x9e71;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hash a sequence of integers into one seed.
pub fn derive(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(parts))
}
