//! The morphology network: a signature encoder mapping a motion window to a
//! latent vector, seven linear classification heads, the weighted loss, an
//! optimizer, checkpoints and a finite-difference gradient check.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;

use ndarray::Array3;
use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::Mode;
pub use loss::{loss_total, predict_config, ConfigLabels, DecoderOutput, LossBreakdown, LossConfig};
pub use model::{EncoderConfig, MorphologyNet, Variant};
pub use optim::{Adam, AdamConfig};

use crate::dataset::SampleWindow;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label out of range: {0}")]
    Label(String),
    #[error("bad config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<&SampleWindow> for ConfigLabels {
    fn from(w: &SampleWindow) -> Self {
        ConfigLabels { leg: w.label_leg.get() as u8, joints: w.label_joints }
    }
}

/// Stacks windows into a `(batch, time, channels)` input.
pub fn batch_input(windows: &[&SampleWindow]) -> Result<Array3<f64>, NetError> {
    let first = windows.first().ok_or_else(|| NetError::Shape("empty batch".into()))?;
    let (t, c) = first.values.dim();
    let mut x = Array3::<f64>::zeros((windows.len(), t, c));
    for (i, w) in windows.iter().enumerate() {
        if w.values.dim() != (t, c) {
            return Err(NetError::Shape(format!("window {:?} in a batch of {:?}", w.values.dim(), (t, c))));
        }
        x.index_axis_mut(ndarray::Axis(0), i).zip_mut_with(&w.values, |d, &s| *d = s as f64);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn problem(b: usize, t: usize, c: usize) -> (Array3<f64>, Vec<ConfigLabels>) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Array3::from_shape_simple_fn((b, t, c), || rng.random_range(-1.0..1.0));
        let labels = (0..b)
            .map(|_| ConfigLabels { leg: rng.random_range(0..30), joints: std::array::from_fn(|_| rng.random_range(0..12)) })
            .collect();
        (x, labels)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for v in [Variant::ConvSe, Variant::Mlp, Variant::Lstm] {
            let (x, labels) = problem(4, 24, 5);
            let mut net = MorphologyNet::new(EncoderConfig::tiny(v, 5, 24), 3).unwrap();
            net.set_normalization(&[0.1; 5], &[0.9; 5]).unwrap();
            let r = gradient_check(&mut net, &x, &labels, &LossConfig::default(), 200, 1e-4, 1).unwrap();
            assert_eq!(r.checked, 200);
            assert!(r.max_rel_error < 1e-3, "{v:?}: {r:?}");
        }
    }
}
