//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by `(seed, stream)`, so results never depend on thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream ids used across the crate.
pub(crate) const GEO: u64 = 1;
pub(crate) const NOISE: u64 = 2;
pub(crate) const PERM: u64 = 3;
pub(crate) const INIT: u64 = 4;
pub(crate) const DEQUANT: u64 = 5;
pub(crate) const SHUFFLE: u64 = 6;
pub(crate) const LATENT: u64 = 7;
pub(crate) const SPLIT: u64 = 8;
pub(crate) const LEAK_FLAGS: u64 = 9;
