//! Derivation of independent, reproducible RNG streams from a master seed.
//!
//! Every stochastic step (per-user holdout, per-epoch SGD order, per-user
//! acceptance draws) gets its own ChaCha stream keyed by a tuple of
//! integers, so results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into one 64-bit seed.
pub fn derive(keys: &[u64]) -> u64 {
    keys.iter().fold(0x5eed_u64, |acc, &k| mix(acc ^ mix(k)))
}

pub fn stream(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(keys))
}
