//! Counter-based pseudo-random helpers.
//!
//! Dropout masks and the hashed text embedder need random values that are a
//! pure function of a key, so they are derived by hashing rather than drawn
//! from a stateful generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub(crate) fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Uniform value in [0, 1) for counter `idx` under `key`.
#[inline]
pub(crate) fn unit_f64(key: u64, idx: u64) -> f64 {
    (splitmix64(key ^ splitmix64(idx)) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// FNV-1a over bytes, mixed with a seed.
pub(crate) fn hash_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(h)
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
