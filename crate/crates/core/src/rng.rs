//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, label[, index])`. Keying streams by name rather than by draw
//! order means two models that share a parameter name produce bitwise
//! identical values for it regardless of what else they create, which is
//! what makes the baseline-equivalence checks possible. The f64
//! conversions are done here from raw `next_u64` output so results do not
//! depend on distribution code in external crates.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ fnv1a(label.as_bytes())))
}

pub fn substream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(
        splitmix(seed ^ fnv1a(label.as_bytes())) ^ index,
    ))
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

pub fn uniform_usize(rng: &mut ChaCha8Rng, lo: usize, hi_inclusive: usize) -> usize {
    debug_assert!(hi_inclusive >= lo);
    let span = (hi_inclusive - lo) as u64 + 1;
    lo + (rng.next_u64() % span) as usize
}

/// Standard normal via Box-Muller; draws two uniforms per call.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - unit(rng); // (0, 1]
    let u2 = unit(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        xs.swap(i, j);
    }
}
