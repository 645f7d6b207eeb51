use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::MorphologyNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// Adaptive-moment optimizer over the trainable parameters of a network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut MorphologyNet) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let moments = &mut self.moments;
        let mut i = 0;
        net.visit_params(&mut |_, p| {
            if !p.trainable {
                return;
            }
            if moments.len() == i {
                moments.push((Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim())));
            }
            let (m, v) = &mut moments[i];
            i += 1;
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                let g = g + c.weight_decay * *w;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *w -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::layers::Mode;
    use crate::net::model::{EncoderConfig, Variant};

    #[test]
    fn first_step_moves_each_weight_by_about_lr() {
        let mut net = MorphologyNet::new(EncoderConfig::tiny(Variant::Mlp, 2, 4), 0).unwrap();
        let x = ndarray::Array3::from_elem((3, 4, 2), 0.5);
        net.zero_grad();
        let logits = net.forward(&x, Mode::DETERMINISTIC_TRAIN, true).unwrap();
        let before = net.clone();
        net.backward(&(logits.mapv(|_| 1.0)));
        let mut opt = Adam::new(AdamConfig { learning_rate: 1e-3, weight_decay: 0.0, ..Default::default() });
        opt.step(&mut net);
        let mut old = Vec::new();
        before.clone().visit_params(&mut |_, p| old.push(p.value.clone()));
        let mut k = 0;
        net.visit_params(&mut |name, p| {
            let d = &p.value - &old[k];
            k += 1;
            for (dv, g) in d.iter().zip(p.grad.iter()) {
                if p.trainable && g.abs() > 1e-6 {
                    assert!((dv.abs() - 1e-3).abs() < 1e-5, "{name}: {dv}");
                } else if !p.trainable {
                    assert_eq!(*dv, 0.0, "{name}");
                }
            }
        });
    }
}
