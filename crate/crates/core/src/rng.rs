//! Seed derivation for reproducible, scheduling-independent randomness.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is a
//! pure function of the caller's seed and a small tuple of stream indices
//! (generation, slot, run, ...). Work items can therefore be evaluated on any
//! number of threads and in any order without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into a seed.
pub fn derive_seed(seed: u64, streams: &[u64]) -> u64 {
    streams
        .iter()
        .fold(mix64(seed), |acc, &s| mix64(acc ^ mix64(s)))
}

pub fn rng_for(seed: u64, streams: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, streams))
}
