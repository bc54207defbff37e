//! Keyed deterministic pseudo-random values for the synthetic generators.
//!
//! Synthetic features must depend only on their key (position, residue, seed)
//! and never on evaluation order, so they are drawn from a stateless mixer
//! rather than a sequential RNG.

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes an ordered tuple of words.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3_u64, |acc, &w| mix64(acc ^ mix64(w)))
}

/// Uniform in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[-1, 1)`.
#[inline]
pub fn symmetric(h: u64) -> f64 {
    2.0 * unit(h) - 1.0
}

/// Standard normal via Box-Muller on two derived words.
pub fn normal(h: u64) -> f64 {
    let u1 = unit(mix64(h ^ 0x5851_F42D_4C95_7F2D)).max(f64::MIN_POSITIVE);
    let u2 = unit(mix64(h ^ 0x1405_7B7E_F767_814F));
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}
