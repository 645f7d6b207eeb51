use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    join, relu, relu_backward, time_mean, time_mean_backward, BatchNorm, Conv1d, Dropout, Linear, Lstm, Mode, Param,
    SqueezeExcite, Visit,
};
use super::loss::{DecoderOutput, LOGIT_WIDTH};
use super::NetError;
use crate::dataset::WINDOW_STEPS;
use crate::sim::collect::CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Convolution stages with squeeze-and-excitation gating.
    ConvSe,
    Lstm,
    Mlp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::ConvSe => "conv_se",
            Variant::Lstm => "lstm",
            Variant::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub time_steps: usize,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub se_reduction: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Dense widths of the flattening trunk.
    pub mlp_trunk: Vec<usize>,
    /// Hidden width of the projection to the latent vector.
    pub projection_hidden: usize,
    pub latent_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: Variant::ConvSe,
            in_channels: CHANNELS,
            time_steps: WINDOW_STEPS,
            filters: vec![64, 128, 256],
            kernels: vec![7, 5, 3],
            strides: vec![2, 2, 2],
            se_reduction: 8,
            lstm_hidden: 64,
            lstm_layers: 2,
            mlp_trunk: vec![512],
            projection_hidden: 512,
            latent_dim: 256,
            dropout: 0.3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if self.in_channels == 0 || self.time_steps == 0 || self.latent_dim == 0 || self.projection_hidden == 0 {
            return bad("sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        match self.variant {
            Variant::ConvSe => {
                let n = self.filters.len();
                if n == 0 || self.kernels.len() != n || self.strides.len() != n {
                    return bad("filters, kernels and strides need one entry per stage");
                }
                if self.filters.iter().chain(&self.kernels).chain(&self.strides).any(|&v| v == 0) {
                    return bad("stage sizes must be positive");
                }
                let mut t = self.time_steps;
                for i in 0..n {
                    if t + 2 * (self.kernels[i] / 2) < self.kernels[i] {
                        return bad("sequence too short for the kernels");
                    }
                    t = super::layers::conv_out_len(t, self.kernels[i], self.strides[i], self.kernels[i] / 2);
                }
            }
            Variant::Lstm => {
                if self.lstm_layers == 0 || self.lstm_hidden == 0 {
                    return bad("lstm needs at least one layer of positive width");
                }
            }
            Variant::Mlp => {
                if self.mlp_trunk.is_empty() || self.mlp_trunk.contains(&0) {
                    return bad("mlp trunk needs positive widths");
                }
            }
        }
        Ok(())
    }

    /// Small configuration for tests and gradient checks.
    pub fn tiny(variant: Variant, in_channels: usize, time_steps: usize) -> Self {
        EncoderConfig {
            variant,
            in_channels,
            time_steps,
            filters: vec![6, 8, 8],
            kernels: vec![5, 3, 3],
            strides: vec![2, 2, 2],
            se_reduction: 2,
            lstm_hidden: 5,
            lstm_layers: 2,
            mlp_trunk: vec![12],
            projection_hidden: 12,
            latent_dim: 8,
            dropout: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
struct ConvStage {
    conv: Conv1d,
    bn: BatchNorm,
    se: SqueezeExcite,
    drop: Dropout,
    relu_out: Array2<f64>,
    t_out: usize,
}

#[derive(Debug, Clone)]
struct DenseBlock {
    fc: Linear,
    bn: BatchNorm,
    drop: Dropout,
    relu_out: Array2<f64>,
}

#[derive(Debug, Clone)]
enum Trunk {
    ConvSe(Vec<ConvStage>),
    Lstm(Vec<Lstm>),
    Mlp(Vec<DenseBlock>),
}

/// Encoder from a window to the latent vector plus the seven linear heads.
#[derive(Debug, Clone)]
pub struct MorphologyNet {
    config: EncoderConfig,
    /// Per-channel input shift and scale.
    norm_mean: Param,
    norm_std: Param,
    trunk: Trunk,
    proj1: Linear,
    proj_drop: Dropout,
    proj2: Linear,
    heads: Linear,
    rng: ChaCha8Rng,
    batch: usize,
    proj_relu: Array2<f64>,
}

impl MorphologyNet {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.in_channels;
        let (trunk, features) = match config.variant {
            Variant::ConvSe => {
                let mut stages = Vec::new();
                let mut c_in = c;
                for i in 0..config.filters.len() {
                    let f = config.filters[i];
                    stages.push(ConvStage {
                        conv: Conv1d::new(&mut rng, c_in, f, config.kernels[i], config.strides[i]),
                        bn: BatchNorm::new(f),
                        se: SqueezeExcite::new(&mut rng, f, config.se_reduction),
                        drop: Dropout::new(config.dropout),
                        relu_out: Array2::zeros((0, 0)),
                        t_out: 0,
                    });
                    c_in = f;
                }
                (Trunk::ConvSe(stages), config.filters.iter().sum())
            }
            Variant::Lstm => {
                let layers = (0..config.lstm_layers)
                    .map(|i| Lstm::new(&mut rng, if i == 0 { c } else { config.lstm_hidden }, config.lstm_hidden))
                    .collect();
                (Trunk::Lstm(layers), config.lstm_hidden)
            }
            Variant::Mlp => {
                let mut blocks = Vec::new();
                let mut width = c * config.time_steps;
                for &w in &config.mlp_trunk {
                    blocks.push(DenseBlock {
                        fc: Linear::new(&mut rng, width, w),
                        bn: BatchNorm::new(w),
                        drop: Dropout::new(config.dropout),
                        relu_out: Array2::zeros((0, 0)),
                    });
                    width = w;
                }
                (Trunk::Mlp(blocks), width)
            }
        };
        let proj1 = Linear::new(&mut rng, features, config.projection_hidden);
        let proj2 = Linear::new(&mut rng, config.projection_hidden, config.latent_dim);
        let heads = Linear::new(&mut rng, config.latent_dim, LOGIT_WIDTH);
        Ok(MorphologyNet {
            norm_mean: Param::buffer(Array2::zeros((1, c))),
            norm_std: Param::buffer(Array2::ones((1, c))),
            proj_drop: Dropout::new(config.dropout),
            config,
            trunk,
            proj1,
            proj2,
            heads,
            rng,
            batch: 0,
            proj_relu: Array2::zeros((0, 0)),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Sets the per-channel input normalization. Zero spreads are replaced by one.
    pub fn set_normalization(&mut self, mean: &[f64], std: &[f64]) -> Result<(), NetError> {
        let c = self.config.in_channels;
        if mean.len() != c || std.len() != c {
            return Err(NetError::Shape(format!("normalization for {} channels, model has {c}", mean.len())));
        }
        for i in 0..c {
            self.norm_mean.value[[0, i]] = mean[i];
            self.norm_std.value[[0, i]] = if std[i] > 1e-12 { std[i] } else { 1.0 };
        }
        Ok(())
    }

    /// Reseeds the dropout stream.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("input.mean", &mut self.norm_mean);
        f("input.std", &mut self.norm_std);
        match &mut self.trunk {
            Trunk::ConvSe(stages) => {
                for (i, st) in stages.iter_mut().enumerate() {
                    let p = format!("conv{i}");
                    st.conv.visit(&join(&p, "conv"), f);
                    st.bn.visit(&join(&p, "bn"), f);
                    st.se.visit(&join(&p, "se"), f);
                }
            }
            Trunk::Lstm(layers) => {
                for (i, l) in layers.iter_mut().enumerate() {
                    l.visit(&format!("lstm{i}"), f);
                }
            }
            Trunk::Mlp(blocks) => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    let p = format!("dense{i}");
                    b.fc.visit(&join(&p, "fc"), f);
                    b.bn.visit(&join(&p, "bn"), f);
                }
            }
        }
        self.proj1.visit("proj1", f);
        self.proj2.visit("proj2", f);
        self.heads.visit("heads", f);
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.grad.fill(0.0));
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<(), NetError> {
        let (b, t, c) = x.dim();
        if c != self.config.in_channels || t != self.config.time_steps || b == 0 {
            return Err(NetError::Shape(format!(
                "input {:?}, model expects (batch, {}, {})",
                x.dim(),
                self.config.time_steps,
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Latent vectors for a `(batch, time, channels)` input.
    pub fn encode(&mut self, x: &Array3<f64>, mode: Mode) -> Result<Array2<f64>, NetError> {
        self.forward_encoder(x, mode, false)
    }

    /// Head outputs for latent vectors.
    pub fn decode(&mut self, z: &Array2<f64>) -> Result<DecoderOutput, NetError> {
        if z.ncols() != self.config.latent_dim {
            return Err(NetError::Shape(format!("latent width {}, model uses {}", z.ncols(), self.config.latent_dim)));
        }
        Ok(DecoderOutput::from_logits(&self.heads.forward(z, false)))
    }

    /// Logits `(batch, 102)`. With `keep` the activations are cached for [`Self::backward`].
    pub fn forward(&mut self, x: &Array3<f64>, mode: Mode, keep: bool) -> Result<Array2<f64>, NetError> {
        let z = self.forward_encoder(x, mode, keep)?;
        Ok(self.heads.forward(&z, keep))
    }

    fn forward_encoder(&mut self, x: &Array3<f64>, mode: Mode, keep: bool) -> Result<Array2<f64>, NetError> {
        self.check_input(x)?;
        let (batch, t, c) = x.dim();
        self.batch = batch;
        let flat = x.as_standard_layout().into_owned().into_shape_with_order((batch * t, c)).expect("contiguous");
        let xn = (flat - &self.norm_mean.value) / &self.norm_std.value;
        let rng = &mut self.rng;
        let features = match &mut self.trunk {
            Trunk::ConvSe(stages) => {
                let mut h = xn;
                let mut t_cur = t;
                let mut pooled = Vec::with_capacity(stages.len());
                for st in stages.iter_mut() {
                    let y = st.conv.forward(&h, batch, t_cur, keep);
                    t_cur = st.conv.out_len(t_cur);
                    let mut y = st.bn.forward(&y, mode, keep);
                    relu(&mut y);
                    if keep {
                        st.relu_out = y.clone();
                    }
                    st.t_out = t_cur;
                    let y = st.se.forward(&y, batch, t_cur, keep);
                    let y = st.drop.forward(y, mode, rng);
                    pooled.push(time_mean(&y, batch, t_cur));
                    h = y;
                }
                let views: Vec<_> = pooled.iter().map(|p| p.view()).collect();
                ndarray::concatenate(Axis(1), &views).expect("same batch")
            }
            Trunk::Lstm(layers) => {
                let x3 = xn.into_shape_with_order((batch, t, c)).expect("contiguous");
                let mut seq: Vec<Array2<f64>> = (0..t).map(|i| x3.slice(s![.., i, ..]).to_owned()).collect();
                for l in layers.iter_mut() {
                    seq = l.forward(&seq, keep);
                }
                seq.pop().expect("non-empty sequence")
            }
            Trunk::Mlp(blocks) => {
                let mut h = xn.into_shape_with_order((batch, t * c)).expect("contiguous");
                for b in blocks.iter_mut() {
                    let y = b.fc.forward(&h, keep);
                    let mut y = b.bn.forward(&y, mode, keep);
                    relu(&mut y);
                    if keep {
                        b.relu_out = y.clone();
                    }
                    h = b.drop.forward(y, mode, rng);
                }
                h
            }
        };
        let mut h = self.proj1.forward(&features, keep);
        relu(&mut h);
        if keep {
            self.proj_relu = h.clone();
        }
        let h = self.proj_drop.forward(h, mode, &mut self.rng);
        Ok(self.proj2.forward(&h, keep))
    }

    /// Accumulates parameter gradients for the last kept forward pass.
    pub fn backward(&mut self, dlogits: &Array2<f64>) {
        let dz = self.heads.backward(dlogits);
        let dh = self.proj2.backward(&dz);
        let mut dh = self.proj_drop.backward(dh);
        relu_backward(&mut dh, &self.proj_relu);
        let dfeat = self.proj1.backward(&dh);
        let batch = self.batch;
        match &mut self.trunk {
            Trunk::ConvSe(stages) => {
                let mut offsets = Vec::with_capacity(stages.len());
                let mut o = 0;
                for st in stages.iter() {
                    offsets.push(o);
                    o += st.conv.w.value.ncols();
                }
                let mut dnext: Option<Array2<f64>> = None;
                for (i, st) in stages.iter_mut().enumerate().rev() {
                    let width = st.conv.w.value.ncols();
                    let dpool = dfeat.slice(s![.., offsets[i]..offsets[i] + width]).to_owned();
                    let mut dy = time_mean_backward(&dpool, st.t_out);
                    if let Some(d) = dnext.take() {
                        dy += &d;
                    }
                    let dy = st.drop.backward(dy);
                    let mut dy = st.se.backward(&dy);
                    relu_backward(&mut dy, &st.relu_out);
                    let dy = st.bn.backward(&dy);
                    dnext = Some(st.conv.backward(&dy));
                }
                debug_assert_eq!(dnext.map(|d| d.nrows()), Some(batch * self.config.time_steps));
            }
            Trunk::Lstm(layers) => {
                let t = self.config.time_steps;
                let mut dseq = vec![Array2::<f64>::zeros((batch, self.config.lstm_hidden)); t];
                dseq[t - 1] = dfeat;
                for l in layers.iter_mut().rev() {
                    dseq = l.backward(&dseq);
                }
            }
            Trunk::Mlp(blocks) => {
                let mut d = dfeat;
                for b in blocks.iter_mut().rev() {
                    let mut dy = b.drop.backward(d);
                    relu_backward(&mut dy, &b.relu_out);
                    let dy = b.bn.backward(&dy);
                    d = b.fc.backward(&dy);
                }
            }
        }
    }

    /// Global gradient norm over trainable parameters.
    pub fn grad_norm(&mut self) -> f64 {
        let mut sq = 0.0;
        self.visit_params(&mut |_, p| {
            if p.trainable {
                sq += p.grad.iter().map(|g| g * g).sum::<f64>()
            }
        });
        sq.sqrt()
    }

    /// Scales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            self.visit_params(&mut |_, p| {
                if p.trainable {
                    p.grad *= k
                }
            });
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::loss::{loss_total, ConfigLabels, LossConfig};
    use rand::Rng;

    fn input(b: usize, t: usize, c: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((b, t, c), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn default_shapes() {
        for v in [Variant::ConvSe, Variant::Lstm, Variant::Mlp] {
            let cfg = EncoderConfig { variant: v, lstm_hidden: 8, ..Default::default() };
            let mut net = MorphologyNet::new(cfg, 0).unwrap();
            let x = input(3, 160, 30, 1);
            let z = net.encode(&x, Mode::EVAL).unwrap();
            assert_eq!(z.dim(), (3, 256));
            assert!(z.iter().all(|v| v.is_finite()));
            let out = net.decode(&z).unwrap();
            assert_eq!(out.leg_logits.dim(), (3, 30));
            assert_eq!(out.joint_logits.len(), 6);
            assert!(out.joint_logits.iter().all(|j| j.dim() == (3, 12)));
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut net = MorphologyNet::new(EncoderConfig::tiny(Variant::ConvSe, 27, 32), 0).unwrap();
        assert!(matches!(net.encode(&input(2, 32, 30, 0), Mode::EVAL), Err(NetError::Shape(_))));
    }

    #[test]
    fn zero_latent_gives_head_biases() {
        let mut net = MorphologyNet::new(EncoderConfig::tiny(Variant::Mlp, 4, 8), 3).unwrap();
        let out = net.decode(&Array2::zeros((1, 8))).unwrap();
        let bias = net.heads.b.value.row(0).to_owned();
        assert_eq!(out.leg_logits.row(0), bias.slice(s![0..30]));
        assert_eq!(out.joint_logits[5].row(0), bias.slice(s![90..102]));
    }

    #[test]
    fn inference_is_deterministic_and_per_sample() {
        let mut net = MorphologyNet::new(EncoderConfig::tiny(Variant::ConvSe, 4, 32), 1).unwrap();
        let x = input(5, 32, 4, 2);
        let a = net.forward(&x, Mode::EVAL, false).unwrap();
        assert_eq!(a, net.forward(&x, Mode::EVAL, false).unwrap());
        // batch composition does not change an eval-mode output
        let single = net.forward(&x.slice(s![2..3, .., ..]).to_owned(), Mode::EVAL, false).unwrap();
        for k in 0..LOGIT_WIDTH {
            assert!((single[[0, k]] - a[[2, k]]).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_order_matters() {
        let mut net = MorphologyNet::new(EncoderConfig { filters: vec![8, 8, 8], ..Default::default() }, 4).unwrap();
        let x = input(1, 160, 30, 5);
        let mut permuted = x.clone();
        for c in 0..10 {
            let src = x.slice(s![.., (9 - c) * 16..(10 - c) * 16, ..]).to_owned();
            permuted.slice_mut(s![.., c * 16..(c + 1) * 16, ..]).assign(&src);
        }
        let a = net.encode(&x, Mode::EVAL).unwrap();
        let b = net.encode(&permuted, Mode::EVAL).unwrap();
        assert!((&a - &b).iter().any(|v| v.abs() > 1e-9));
    }

    #[test]
    fn a_few_steps_reduce_loss() {
        let mut net = MorphologyNet::new(EncoderConfig::tiny(Variant::ConvSe, 4, 32), 0).unwrap();
        let x = input(6, 32, 4, 9);
        let labels: Vec<ConfigLabels> =
            (0..6).map(|i| ConfigLabels { leg: i as u8 * 4, joints: [i as u8; 6] }).collect();
        let cfg = LossConfig::default();
        let loss = |net: &mut MorphologyNet| {
            let l = net.forward(&x, Mode::DETERMINISTIC_TRAIN, false).unwrap();
            loss_total(&l, &labels, &cfg).unwrap().0.total
        };
        let before = loss(&mut net);
        for _ in 0..20 {
            net.zero_grad();
            let logits = net.forward(&x, Mode::DETERMINISTIC_TRAIN, true).unwrap();
            let (_, g) = loss_total(&logits, &labels, &cfg).unwrap();
            net.backward(&g);
            net.visit_params(&mut |_, p| {
                if p.trainable {
                    p.value.scaled_add(-0.05, &p.grad);
                }
            });
        }
        assert!(loss(&mut net) < before);
    }
}
