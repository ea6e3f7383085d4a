//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use headimpact_core::dataset::Label;

/// `n` uniform values in [-1, 1).
pub fn random_input(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Labels with a true probability of `1 / (imbalance + 1)`.
pub fn random_labels(n: usize, imbalance: u32, seed: u64) -> Vec<Label> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.random_ratio(1, imbalance + 1) {
                Label::TrueImpact
            } else {
                Label::FalseImpact
            }
        })
        .collect()
}
