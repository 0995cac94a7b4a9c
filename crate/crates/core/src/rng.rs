//! Stateless hashing helpers: counter-based uniforms and seed derivation.

use crate::error::{param, Result};

/// SplitMix64 finalizer. A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` keyed by `(seed, i, j)`. Independent of call order.
#[inline]
pub fn cell_uniform(seed: u64, i: usize, j: usize) -> f64 {
    let h = mix64(mix64(mix64(seed) ^ i as u64) ^ (j as u64).rotate_left(32));
    // top 53 bits
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

const CELL_BITS: u32 = 24;
const STREAM_BITS: u32 = 8;
const TRIAL_BITS: u32 = 24;

/// Derives a per-trial seed from `(master, cell, stream, trial)`.
///
/// The tuple is packed into disjoint bit fields before mixing, so for a fixed
/// master seed distinct tuples always map to distinct seeds.
pub fn derive_seed(master: u64, cell: usize, stream: usize, trial: usize) -> Result<u64> {
    if cell >= 1 << CELL_BITS || stream >= 1 << STREAM_BITS || trial >= 1 << TRIAL_BITS {
        return param(format!(
            "seed tuple out of range (cell {cell}, stream {stream}, trial {trial})"
        ));
    }
    let packed =
        (cell as u64) << (STREAM_BITS + TRIAL_BITS) | (stream as u64) << TRIAL_BITS | trial as u64;
    Ok(mix64(mix64(master) ^ packed))
}
