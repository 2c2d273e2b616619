//! Deterministic seed derivation.
//!
//! All generators are `ChaCha8Rng`, which produces the same stream on every
//! platform. Sub-seeds are derived with a splitmix64 avalanche so that nearby
//! tuples such as `(seed, 3, 4)` and `(seed, 4, 3)` land on unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 output step applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tuple of integers into a single seed.
///
/// `mix(&[a, b, c]) = s(s(s(a) ^ b) ^ c)` with `s = splitmix64`, so the
/// result depends on order and every component passes through a full
/// avalanche.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .skip(1)
        .fold(splitmix64(parts.first().copied().unwrap_or(0)), |acc, &p| {
            splitmix64(acc ^ p)
        })
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
