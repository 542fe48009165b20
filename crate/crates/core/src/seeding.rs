//! Seed derivation for nested deterministic streams.
//!
//! Every stage derives per-step and per-sample seeds as pure functions of
//! `(base seed, index)` instead of consuming one long RNG stream; that is
//! what makes stop/resume runs reproduce the original step sequence.

/// SplitMix64-style mix of a base seed and a stream index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
