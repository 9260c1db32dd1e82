//! Counter-based randomness.
//!
//! Site environments and tie-break coins are pure functions of
//! `(seed, coordinates)`, so any window of a given seed agrees site-for-site
//! with every other window of the same seed, and sampling order never
//! matters.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a seed, a stream tag and a coordinate tuple.
#[inline]
pub fn hash_coords(seed: u64, stream: u64, coords: &[i64]) -> u64 {
    let mut h = mix64(seed ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93));
    for (axis, &c) in coords.iter().enumerate() {
        h = mix64(h ^ (c as u64).wrapping_add(GOLDEN.wrapping_mul(axis as u64 + 1)));
    }
    h
}

/// Uniform in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Seed of trial `index` under `master`. Injective in `index` for a fixed master.
#[inline]
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// Stream tags keep independent uses of one seed apart.
pub mod stream {
    pub const ENVIRONMENT: u64 = 0;
    pub const TIEBREAK: u64 = 1;
    pub const SAMPLE: u64 = 2;
}
