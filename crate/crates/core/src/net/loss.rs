use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::codec::{HALF_JOINTS, JOINT_STATES, LEG_PATTERNS};

pub const LEG_CLASSES: usize = LEG_PATTERNS;
pub const JOINT_CLASSES: usize = JOINT_STATES as usize;
pub const JOINT_HEADS: usize = HALF_JOINTS;
/// Width of the concatenated head outputs.
pub const LOGIT_WIDTH: usize = LEG_CLASSES + JOINT_HEADS * JOINT_CLASSES;

/// Class labels of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigLabels {
    pub leg: u8,
    pub joints: [u8; JOINT_HEADS],
}

impl ConfigLabels {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.leg as usize >= LEG_CLASSES || self.joints.iter().any(|&j| j as usize >= JOINT_CLASSES) {
            return Err(NetError::Label(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the leg head; the joint heads share the rest equally.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.75 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(NetError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// Batch-mean losses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub leg: f64,
    pub joints: [f64; JOINT_HEADS],
}

/// Column range of head `h` (0 is the leg head).
pub fn head_range(h: usize) -> std::ops::Range<usize> {
    if h == 0 {
        0..LEG_CLASSES
    } else {
        let start = LEG_CLASSES + (h - 1) * JOINT_CLASSES;
        start..start + JOINT_CLASSES
    }
}

/// Logits split per head for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    pub leg_logits: Array2<f64>,
    pub joint_logits: Vec<Array2<f64>>,
}

impl DecoderOutput {
    pub fn from_logits(logits: &Array2<f64>) -> Self {
        DecoderOutput {
            leg_logits: logits.slice(s![.., head_range(0)]).to_owned(),
            joint_logits: (1..=JOINT_HEADS).map(|h| logits.slice(s![.., head_range(h)]).to_owned()).collect(),
        }
    }
}

/// Cross-entropy of one row and the softmax probabilities.
fn cross_entropy(row: ArrayView1<f64>, label: usize) -> (f64, Vec<f64>) {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (row[label] - max);
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

/// `λ·CE_leg + (1−λ)/6·Σ CE_joint`, averaged over the batch, with the
/// gradient with respect to the logits.
pub fn loss_total(
    logits: &Array2<f64>,
    labels: &[ConfigLabels],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Array2<f64>), NetError> {
    cfg.validate()?;
    let (batch, width) = logits.dim();
    if width != LOGIT_WIDTH || batch != labels.len() || batch == 0 {
        return Err(NetError::Shape(format!("logits {:?} for {} labels", logits.dim(), labels.len())));
    }
    for l in labels {
        l.validate()?;
    }
    let mut out = LossBreakdown::default();
    let mut grad = Array2::<f64>::zeros((batch, width));
    let weights: Vec<f64> =
        std::iter::once(cfg.lambda).chain(std::iter::repeat_n((1.0 - cfg.lambda) / JOINT_HEADS as f64, JOINT_HEADS)).collect();
    for (b, l) in labels.iter().enumerate() {
        for (h, &weight) in weights.iter().enumerate() {
            let range = head_range(h);
            let label = if h == 0 { l.leg } else { l.joints[h - 1] } as usize;
            let (loss, probs) = cross_entropy(logits.slice(s![b, range.clone()]), label);
            if h == 0 {
                out.leg += loss;
            } else {
                out.joints[h - 1] += loss;
            }
            let scale = weight / batch as f64;
            for (k, p) in probs.into_iter().enumerate() {
                grad[[b, range.start + k]] = scale * (p - if k == label { 1.0 } else { 0.0 });
            }
        }
    }
    out.leg /= batch as f64;
    for j in &mut out.joints {
        *j /= batch as f64;
    }
    out.total = cfg.lambda * out.leg + (1.0 - cfg.lambda) * out.joints.iter().sum::<f64>() / JOINT_HEADS as f64;
    Ok((out, grad))
}

/// Lowest index among the maxima.
fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax of every head, ties to the lowest class index.
pub fn predict_config(logits: &Array2<f64>) -> Vec<ConfigLabels> {
    logits
        .rows()
        .into_iter()
        .map(|row| ConfigLabels {
            leg: argmax(row.slice(s![head_range(0)])) as u8,
            joints: std::array::from_fn(|j| argmax(row.slice(s![head_range(j + 1)])) as u8),
        })
        .collect()
}
