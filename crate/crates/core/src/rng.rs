//! Seed derivation helpers.
//!
//! Every stochastic component (initialization, sampling, masking, dropout,
//! bootstrap) draws from a ChaCha stream whose seed is derived from a root
//! seed plus a small set of stream keys, so results never depend on the
//! order in which components are constructed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a root seed with a sequence of stream keys.
pub fn derive_seed(root: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(root), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(root: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, keys))
}

/// Map 64 random bits onto [0, 1) using the top 53 bits.
pub fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

// stream tags
pub const TAG_INIT: u64 = 0x696e6974;
pub const TAG_SAMPLE: u64 = 0x73616d70;
pub const TAG_MASK: u64 = 0x6d61736b;
pub const TAG_DROPOUT: u64 = 0x64726f70;
pub const TAG_BOOTSTRAP: u64 = 0x626f6f74;
