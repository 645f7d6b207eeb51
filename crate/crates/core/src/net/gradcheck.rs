use ndarray::Array3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::loss::{loss_total, ConfigLabels, LossConfig};
use super::model::MorphologyNet;
use super::NetError;

/// Gradients smaller than this are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub grad_norm: f64,
}

/// Compares analytic gradients of the total loss with central differences
/// on up to `max_params` randomly chosen trainable scalars. Runs with batch
/// statistics on and dropout off, so the loss is a deterministic function of
/// the parameters.
pub fn gradient_check(
    net: &mut MorphologyNet,
    x: &Array3<f64>,
    labels: &[ConfigLabels],
    loss_cfg: &LossConfig,
    max_params: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport, NetError> {
    let mode = Mode::DETERMINISTIC_TRAIN;
    net.zero_grad();
    let logits = net.forward(x, mode, true)?;
    let (_, dlogits) = loss_total(&logits, labels, loss_cfg)?;
    net.backward(&dlogits);
    let grad_norm = net.grad_norm();

    let mut sizes = Vec::new();
    net.visit_params(&mut |_, p| sizes.push(if p.trainable { p.value.len() } else { 0 }));
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample(&mut rng, total, max_params.min(total)).into_vec();
    picks.sort_unstable();

    let mut analytic = Vec::with_capacity(picks.len());
    let mut targets = Vec::with_capacity(picks.len());
    for &flat in &picks {
        let (mut tensor, mut offset) = (0, flat);
        while offset >= sizes[tensor] {
            offset -= sizes[tensor];
            tensor += 1;
        }
        targets.push((tensor, offset));
    }
    let mut k = 0;
    net.visit_params(&mut |_, p| {
        for &(t, o) in &targets {
            if t == k {
                analytic.push(p.grad.as_slice().expect("standard layout")[o]);
            }
        }
        k += 1;
    });

    let loss_at = |net: &mut MorphologyNet, target: (usize, usize), delta: f64| -> Result<f64, NetError> {
        let mut k = 0;
        net.visit_params(&mut |_, p| {
            if k == target.0 {
                p.value.as_slice_mut().expect("standard layout")[target.1] += delta;
            }
            k += 1;
        });
        let logits = net.forward(x, mode, false)?;
        Ok(loss_total(&logits, labels, loss_cfg)?.0.total)
    };

    let mut max_rel: f64 = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        let plus = loss_at(net, target, step)?;
        let minus = loss_at(net, target, -2.0 * step)?;
        loss_at(net, target, step)?;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport { max_rel_error: max_rel, checked: targets.len(), grad_norm })
}
