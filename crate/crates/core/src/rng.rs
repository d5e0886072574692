//! Seeded random streams.
//!
//! Every stochastic step in the toolkit draws from [`ChaCha8Rng`] seeded with
//! a 64-bit value through `seed_from_u64`. ChaCha8 output is specified
//! independently of platform and word size, so identical seeds give
//! identical streams everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; used to decorrelate derived seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stage seed from a run seed and a stage name.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(base ^ h)
}
