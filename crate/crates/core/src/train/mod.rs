//! Training loop, metrics, evaluation reports and variant comparison.

pub mod metrics;
pub mod report;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{chance_err_dist, compute_metrics, MetricsReport};
pub use report::{compare_variants, EvalReport, RobotPrediction, VariantComparison};

use crate::codec::{ConfigSpace, HalfConfigCode};
use crate::dataset::window::COM_CHANNELS;
use crate::dataset::{drop_com_channels, sample_window, DatasetError, SampleWindow, WINDOW_STEPS};
use crate::net::{
    batch_input, loss_total, predict_config, Adam, AdamConfig, Checkpoint, ConfigLabels, EncoderConfig, LossConfig,
    Mode, MorphologyNet, NetError, Variant,
};
use crate::sim::collect::{Episode, CHANNELS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Drop the body position channels from the input.
    pub rm_xyz: bool,
    /// Global-norm gradient clip; `None` clips the lstm variant at 1 only.
    pub grad_clip: Option<f64>,
    /// Architecture overrides; the variant and channel count are set from
    /// the fields above.
    pub encoder: EncoderConfig,
    /// Seed of the fixed validation windows.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            weight_decay: 1e-5,
            batch_size: 128,
            epochs: 800,
            lambda: 0.75,
            seed: 0,
            variant: Variant::ConvSe,
            rm_xyz: false,
            grad_clip: None,
            encoder: EncoderConfig::default(),
            eval_seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config("rates and sizes must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(TrainError::Config("gradient clip must be positive".into()));
            }
        }
        self.loss().validate()?;
        self.encoder_config().validate()?;
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.lambda }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            variant: self.variant,
            in_channels: if self.rm_xyz { CHANNELS - COM_CHANNELS } else { CHANNELS },
            time_steps: WINDOW_STEPS,
            ..self.encoder.clone()
        }
    }

    pub fn effective_clip(&self) -> Option<f64> {
        self.grad_clip.or((self.variant == Variant::Lstm).then_some(1.0))
    }
}

/// Window in the model's channel layout.
pub fn model_window<R: rand::Rng + ?Sized>(
    ep: &Episode,
    rng: &mut R,
    space: &ConfigSpace,
    rm_xyz: bool,
) -> Result<SampleWindow, TrainError> {
    let w = sample_window(ep, rng, space)?;
    Ok(if rm_xyz { drop_com_channels(&w)? } else { w })
}

/// One seeded window per episode, in episode order.
pub fn fixed_windows(
    episodes: &[Episode],
    seed: u64,
    space: &ConfigSpace,
    rm_xyz: bool,
) -> Result<Vec<SampleWindow>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    episodes.iter().map(|e| model_window(e, &mut rng, space, rm_xyz)).collect()
}

/// Per-channel mean and standard deviation over every stored row.
pub fn channel_stats(episodes: &[Episode], rm_xyz: bool) -> (Vec<f64>, Vec<f64>) {
    let skip = if rm_xyz { COM_CHANNELS } else { 0 };
    let c = CHANNELS - skip;
    let mut s = vec![0.0; c];
    let mut s2 = vec![0.0; c];
    let mut n = 0.0;
    for ep in episodes {
        for row in ep.cycles.rows() {
            for k in 0..c {
                let v = row[k + skip] as f64;
                s[k] += v;
                s2[k] += v * v;
            }
            n += 1.0;
        }
    }
    let n = f64::max(n, 1.0);
    let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
    let std = s2.iter().zip(&mean).map(|(v, m)| (v / n - m * m).max(0.0).sqrt()).collect();
    (mean, std)
}

/// Loss and predictions of `net` on windows, in inference mode.
pub fn infer(
    net: &mut MorphologyNet,
    windows: &[SampleWindow],
    loss: &LossConfig,
    batch_size: usize,
) -> Result<(f64, Vec<ConfigLabels>), TrainError> {
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        let x = batch_input(&refs)?;
        let labels: Vec<ConfigLabels> = chunk.iter().map(ConfigLabels::from).collect();
        let logits = net.forward(&x, Mode::EVAL, false)?;
        total += loss_total(&logits, &labels, loss)?.0.total * chunk.len() as f64;
        preds.extend(predict_config(&logits));
    }
    Ok((total / windows.len().max(1) as f64, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training batches as they were trained on.
    pub train_tot_acc: f64,
    pub val_loss: f64,
    pub val: MetricsReport,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub parameter_count: usize,
}

pub struct TrainOutcome {
    /// Network with the lowest validation loss.
    pub best: Checkpoint,
    /// Network after the last epoch.
    pub last: Checkpoint,
    pub history: TrainHistory,
}

/// Trains on one fresh window per training episode and epoch, validating
/// on fixed windows, and keeps the weights with the lowest validation loss.
pub fn train(
    train_eps: &[Episode],
    val_eps: &[Episode],
    cfg: &TrainConfig,
    space: &ConfigSpace,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_eps.is_empty() || val_eps.is_empty() {
        return Err(TrainError::Config("train and validation splits must be non-empty".into()));
    }
    let loss_cfg = cfg.loss();
    let mut net = MorphologyNet::new(cfg.encoder_config(), cfg.seed)?;
    let (mean, std) = channel_stats(train_eps, cfg.rm_xyz);
    net.set_normalization(&mean, &std)?;
    let mut opt = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let val_windows = fixed_windows(val_eps, cfg.eval_seed, space, cfg.rm_xyz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE);
    let clip = cfg.effective_clip();
    let extra = |epoch: usize, val_loss: f64| serde_json::json!({ "epoch": epoch, "val_loss": val_loss, "train": cfg });

    let mut history = TrainHistory {
        config: cfg.clone(),
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        parameter_count: net.parameter_count(),
    };
    let mut best = None;
    for epoch in 1..=cfg.epochs {
        let started = std::time::Instant::now();
        let mut windows: Vec<SampleWindow> =
            train_eps.iter().map(|e| model_window(e, &mut rng, space, cfg.rm_xyz)).collect::<Result<_, _>>()?;
        windows.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in windows.chunks(cfg.batch_size) {
            let refs: Vec<&SampleWindow> = chunk.iter().collect();
            let x = batch_input(&refs)?;
            let labels: Vec<ConfigLabels> = chunk.iter().map(ConfigLabels::from).collect();
            net.zero_grad();
            let logits = net.forward(&x, Mode::TRAIN, true)?;
            let (l, g) = loss_total(&logits, &labels, &loss_cfg)?;
            net.backward(&g);
            if let Some(c) = clip {
                net.clip_grad_norm(c);
            }
            opt.step(&mut net);
            loss_sum += l.total * chunk.len() as f64;
            correct += predict_config(&logits).iter().zip(&labels).filter(|(p, t)| p == t).count();
        }
        let (val_loss, preds) = infer(&mut net, &val_windows, &loss_cfg, cfg.batch_size)?;
        let truth: Vec<ConfigLabels> = val_windows.iter().map(ConfigLabels::from).collect();
        let val = compute_metrics(&preds, &truth)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / windows.len() as f64,
            train_tot_acc: correct as f64 / windows.len() as f64,
            val_loss,
            val,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} tot {:.3} | val loss {:.4} leg {:.3} jnt {:.3} tot {:.3} ({:.1}s)",
            rec.train_loss,
            rec.train_tot_acc,
            rec.val_loss,
            rec.val.leg_acc,
            rec.val.jnt_acc_mean,
            rec.val.tot_acc,
            rec.seconds
        );
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = Some(Checkpoint { net: net.clone(), loss: loss_cfg, seed: cfg.seed, extra: extra(epoch, val_loss) });
        }
        history.epochs.push(rec);
    }
    let last_loss = history.epochs.last().map_or(f64::NAN, |r| r.val_loss);
    let last = Checkpoint { net, loss: loss_cfg, seed: cfg.seed, extra: extra(cfg.epochs, last_loss) };
    let best = best.unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { best, last, history })
}

/// Evaluates a checkpoint with one seeded window per episode.
pub fn evaluate(
    ck: &Checkpoint,
    episodes: &[Episode],
    seed: u64,
    space: &ConfigSpace,
) -> Result<EvalReport, TrainError> {
    if episodes.is_empty() {
        return Err(TrainError::Validation("no episodes to evaluate".into()));
    }
    let mut net = ck.net.clone();
    let rm_xyz = net.config().in_channels == CHANNELS - COM_CHANNELS;
    let windows = fixed_windows(episodes, seed, space, rm_xyz)?;
    let (loss, preds) = infer(&mut net, &windows, &ck.loss, 128)?;
    let truth: Vec<ConfigLabels> = windows.iter().map(ConfigLabels::from).collect();
    let metrics = compute_metrics(&preds, &truth)?;
    let robots = episodes
        .iter()
        .zip(&windows)
        .zip(&preds)
        .map(|((ep, w), p)| RobotPrediction::new(ep.code, w.start, p, space))
        .collect::<Result<_, _>>()?;
    Ok(EvalReport {
        variant: net.config().variant,
        rm_xyz,
        seed,
        windows_per_robot: 1,
        loss,
        metrics,
        robots,
    })
}

pub fn save_history(path: &Path, history: &TrainHistory) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(history).map_err(|e| TrainError::Validation(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Predicted half-code for one head output.
pub fn labels_to_code(p: &ConfigLabels, space: &ConfigSpace) -> Result<HalfConfigCode, TrainError> {
    let faces = space.leg_pattern_from_index(
        crate::codec::LegPatternIndex::new(p.leg as usize).map_err(|e| TrainError::Validation(e.to_string()))?,
    );
    Ok(HalfConfigCode { faces, joints: p.joints })
}
