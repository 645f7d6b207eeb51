//! Shared fixtures for the criterion benches.

use metaself_core::factory::generate_family;
use metaself_core::net::ConfigLabels;
use metaself_core::{FactoryConfig, RobotRecord};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// First valid robot drawn from `seed`.
pub fn robot(seed: u64) -> RobotRecord {
    let (family, _) = generate_family(1, seed, &FactoryConfig::default(), 1).expect("generation succeeds");
    family.records.into_iter().next().expect("one robot")
}

/// Gaussian-ish input batch of shape (batch, steps, channels) with random labels.
pub fn batch(batch: usize, steps: usize, channels: usize, seed: u64) -> (Array3<f64>, Vec<ConfigLabels>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array3::from_shape_fn((batch, steps, channels), |_| rng.random::<f64>() * 2.0 - 1.0);
    let labels = (0..batch)
        .map(|_| ConfigLabels { leg: rng.random_range(0..30), joints: std::array::from_fn(|_| rng.random_range(0..12)) })
        .collect();
    (x, labels)
}
