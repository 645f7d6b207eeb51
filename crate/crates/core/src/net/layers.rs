//! Layers with explicit forward and backward passes over `f64` matrices.
//!
//! Sequence activations are stored as `(batch·time, channels)` matrices with
//! the rows of one sample contiguous.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A named tensor with its gradient. Buffers (`trainable == false`) are
/// saved in checkpoints but never updated by the optimizer.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad, trainable: true }
    }

    pub fn buffer(value: Array2<f64>) -> Self {
        Param { trainable: false, ..Param::new(value) }
    }

    fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Self {
        Param::new(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound)))
    }
}

/// Walks every parameter with a dotted name.
pub trait Visit {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Batch statistics in normalization layers (otherwise running averages).
    pub batch_stats: bool,
    pub dropout: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode { batch_stats: true, dropout: true };
    pub const EVAL: Mode = Mode { batch_stats: false, dropout: false };
    /// Training arithmetic without randomness, for gradient checks.
    pub const DETERMINISTIC_TRAIN: Mode = Mode { batch_stats: true, dropout: false };
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
    x: Option<Array2<f64>>,
}

impl Linear {
    /// Uniform init with bound `1/sqrt(fan_in)`.
    pub fn new(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear { w: Param::uniform(rng, fan_in, fan_out, bound), b: Param::uniform(rng, 1, fan_out, bound), x: None }
    }

    pub fn forward(&mut self, x: &Array2<f64>, keep: bool) -> Array2<f64> {
        let y = x.dot(&self.w.value) + &self.b.value;
        self.x = keep.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.x.as_ref().expect("forward before backward");
        self.w.grad += &x.t().dot(dy);
        self.b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.value.t())
    }
}

impl Visit for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f64,
    eps: f64,
    xhat: Option<Array2<f64>>,
    inv_std: Array1<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Array2::ones((1, channels))),
            beta: Param::new(Array2::zeros((1, channels))),
            running_mean: Param::buffer(Array2::zeros((1, channels))),
            running_var: Param::buffer(Array2::ones((1, channels))),
            momentum: 0.1,
            eps: 1e-5,
            xhat: None,
            inv_std: Array1::zeros(channels),
            batch_stats: true,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode, keep: bool) -> Array2<f64> {
        let n = x.nrows() as f64;
        let (mean, var) = if mode.batch_stats {
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let var = (x - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
            if keep {
                let m = self.momentum;
                let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
                let rm = &self.running_mean.value.row(0) * (1.0 - m) + &mean * m;
                let rv = &self.running_var.value.row(0) * (1.0 - m) + &unbiased * m;
                self.running_mean.value.row_mut(0).assign(&rm);
                self.running_var.value.row_mut(0).assign(&rv);
            }
            (mean, var)
        } else {
            (self.running_mean.value.row(0).to_owned(), self.running_var.value.row(0).to_owned())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma.value + &self.beta.value;
        if keep {
            self.xhat = Some(xhat);
            self.inv_std = inv_std;
            self.batch_stats = mode.batch_stats;
        }
        y
    }

    /// Backward through batch statistics.
    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let xhat = self.xhat.as_ref().expect("forward before backward");
        let n = dy.nrows() as f64;
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.gamma.grad += &(dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma.value;
        if !self.batch_stats {
            return dxhat * &self.inv_std;
        }
        let sum = dxhat.sum_axis(Axis(0));
        let sum_x = (&dxhat * xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n - &sum - &(xhat * &sum_x);
        dx *= &(&self.inv_std / n);
        dx
    }
}

impl Visit for BatchNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

pub fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `dy` where the ReLU output was zero.
pub fn relu_backward(dy: &mut Array2<f64>, y: &Array2<f64>) {
    Zip::from(dy).and(y).for_each(|d, &y| {
        if y <= 0.0 {
            *d = 0.0
        }
    });
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Dropout { p, mask: None }
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`.
    pub fn forward(&mut self, mut x: Array2<f64>, mode: Mode, rng: &mut ChaCha8Rng) -> Array2<f64> {
        if !mode.dropout || self.p == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        x *= &mask;
        self.mask = Some(mask);
        x
    }

    pub fn backward(&self, mut dy: Array2<f64>) -> Array2<f64> {
        if let Some(m) = &self.mask {
            dy *= m;
        }
        dy
    }
}

/// Output length of a padded strided convolution.
pub fn conv_out_len(t_in: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (t_in + 2 * pad - kernel) / stride + 1
}

/// 1-D convolution over time, computed as one matrix product on unfolded
/// input patches.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Param,
    pub b: Param,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub c_in: usize,
    cols: Option<Array2<f64>>,
    dims: (usize, usize, usize),
}

impl Conv1d {
    pub fn new(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Conv1d {
            w: Param::uniform(rng, kernel * c_in, c_out, bound),
            b: Param::uniform(rng, 1, c_out, bound),
            kernel,
            stride,
            pad: kernel / 2,
            c_in,
            cols: None,
            dims: (0, 0, 0),
        }
    }

    pub fn out_len(&self, t_in: usize) -> usize {
        conv_out_len(t_in, self.kernel, self.stride, self.pad)
    }

    /// `x` is `(batch·t_in, c_in)`; returns `(batch·t_out, c_out)`.
    pub fn forward(&mut self, x: &Array2<f64>, batch: usize, t_in: usize, keep: bool) -> Array2<f64> {
        let t_out = self.out_len(t_in);
        let (k, cin) = (self.kernel, self.c_in);
        assert_eq!(x.dim(), (batch * t_in, cin), "conv input shape");
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut cols = Array2::<f64>::zeros((batch * t_out, k * cin));
        let cs = cols.as_slice_mut().expect("fresh array");
        for bi in 0..batch {
            for to in 0..t_out {
                let row = (bi * t_out + to) * k * cin;
                for kk in 0..k {
                    let ti = (to * self.stride + kk) as isize - self.pad as isize;
                    if ti < 0 || ti as usize >= t_in {
                        continue;
                    }
                    let src = (bi * t_in + ti as usize) * cin;
                    cs[row + kk * cin..row + (kk + 1) * cin].copy_from_slice(&xs[src..src + cin]);
                }
            }
        }
        let y = cols.dot(&self.w.value) + &self.b.value;
        if keep {
            self.cols = Some(cols);
            self.dims = (batch, t_in, t_out);
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let cols = self.cols.as_ref().expect("forward before backward");
        let (batch, t_in, t_out) = self.dims;
        let (k, cin) = (self.kernel, self.c_in);
        self.w.grad += &cols.t().dot(dy);
        self.b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dcols = dy.dot(&self.w.value.t());
        let ds = dcols.as_slice().expect("standard layout");
        let mut dx = Array2::<f64>::zeros((batch * t_in, cin));
        let dxs = dx.as_slice_mut().expect("fresh array");
        for bi in 0..batch {
            for to in 0..t_out {
                let row = (bi * t_out + to) * k * cin;
                for kk in 0..k {
                    let ti = (to * self.stride + kk) as isize - self.pad as isize;
                    if ti < 0 || ti as usize >= t_in {
                        continue;
                    }
                    let dst = (bi * t_in + ti as usize) * cin;
                    for c in 0..cin {
                        dxs[dst + c] += ds[row + kk * cin + c];
                    }
                }
            }
        }
        dx
    }
}

impl Visit for Conv1d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Per-sample mean over time: `(batch·t, c)` to `(batch, c)`.
pub fn time_mean(x: &Array2<f64>, batch: usize, t: usize) -> Array2<f64> {
    let c = x.ncols();
    let x3 = x.view().into_shape_with_order((batch, t, c)).expect("rows grouped by sample");
    x3.mean_axis(Axis(1)).expect("t > 0")
}

/// Gradient of [`time_mean`]: spreads `(batch, c)` back over time.
pub fn time_mean_backward(d: &Array2<f64>, t: usize) -> Array2<f64> {
    let (batch, c) = d.dim();
    let scaled = d / t as f64;
    let mut out = Array2::<f64>::zeros((batch * t, c));
    for bi in 0..batch {
        out.slice_mut(ndarray::s![bi * t..(bi + 1) * t, ..]).assign(&scaled.row(bi));
    }
    out
}

/// Squeeze-and-excitation channel gating.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub fc1: Linear,
    pub fc2: Linear,
    x: Option<Array2<f64>>,
    h: Array2<f64>,
    g: Array2<f64>,
    dims: (usize, usize),
}

impl SqueezeExcite {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        SqueezeExcite {
            fc1: Linear::new(rng, channels, hidden),
            fc2: Linear::new(rng, hidden, channels),
            x: None,
            h: Array2::zeros((0, 0)),
            g: Array2::zeros((0, 0)),
            dims: (0, 0),
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, batch: usize, t: usize, keep: bool) -> Array2<f64> {
        let s = time_mean(x, batch, t);
        let mut h = self.fc1.forward(&s, keep);
        relu(&mut h);
        let g = self.fc2.forward(&h, keep).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let mut y = x.clone();
        for bi in 0..batch {
            let mut block = y.slice_mut(ndarray::s![bi * t..(bi + 1) * t, ..]);
            block *= &g.row(bi);
        }
        if keep {
            self.x = Some(x.clone());
            self.h = h;
            self.g = g;
            self.dims = (batch, t);
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.x.take().expect("forward before backward");
        let (batch, t) = self.dims;
        let c = x.ncols();
        let mut dx = dy.clone();
        let mut dg = Array2::<f64>::zeros((batch, c));
        for bi in 0..batch {
            let rows = ndarray::s![bi * t..(bi + 1) * t, ..];
            let mut block = dx.slice_mut(rows);
            block *= &self.g.row(bi);
            let prod = &dy.slice(rows) * &x.slice(rows);
            dg.row_mut(bi).assign(&prod.sum_axis(Axis(0)));
        }
        let dz2 = dg * &self.g.mapv(|g| g * (1.0 - g));
        let mut dh = self.fc2.backward(&dz2);
        relu_backward(&mut dh, &self.h);
        let ds = self.fc1.backward(&dh);
        dx += &time_mean_backward(&ds, t);
        dx
    }
}

impl Visit for SqueezeExcite {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone)]
struct LstmStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates i, f, g, o side by side.
    gates: Array2<f64>,
    c: Array2<f64>,
}

/// One LSTM layer over a sequence of `(batch, input)` matrices.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub wx: Param,
    pub wh: Param,
    pub b: Param,
    pub hidden: usize,
    steps: Vec<LstmStep>,
}

impl Lstm {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Lstm {
            wx: Param::uniform(rng, input, 4 * hidden, bound),
            wh: Param::uniform(rng, hidden, 4 * hidden, bound),
            b: Param::uniform(rng, 1, 4 * hidden, bound),
            hidden,
            steps: Vec::new(),
        }
    }

    pub fn forward(&mut self, xs: &[Array2<f64>], keep: bool) -> Vec<Array2<f64>> {
        let batch = xs.first().map_or(0, |x| x.nrows());
        let hd = self.hidden;
        let mut h = Array2::<f64>::zeros((batch, hd));
        let mut c = Array2::<f64>::zeros((batch, hd));
        let mut out = Vec::with_capacity(xs.len());
        self.steps.clear();
        for x in xs {
            let mut z = x.dot(&self.wx.value) + h.dot(&self.wh.value) + &self.b.value;
            for mut row in z.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if (2 * hd..3 * hd).contains(&j) { v.tanh() } else { sigmoid(*v) };
                }
            }
            let i = z.slice(ndarray::s![.., 0..hd]);
            let f = z.slice(ndarray::s![.., hd..2 * hd]);
            let g = z.slice(ndarray::s![.., 2 * hd..3 * hd]);
            let o = z.slice(ndarray::s![.., 3 * hd..]);
            let c_new = &f * &c + &i * &g;
            let h_new = &o * &c_new.mapv(f64::tanh);
            if keep {
                self.steps.push(LstmStep { x: x.clone(), h_prev: h, c_prev: c, gates: z.clone(), c: c_new.clone() });
            }
            h = h_new;
            c = c_new;
            out.push(h.clone());
        }
        out
    }

    /// `dhs[t]` is the loss gradient flowing into `h_t` from above.
    pub fn backward(&mut self, dhs: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let hd = self.hidden;
        let t_len = self.steps.len();
        assert_eq!(dhs.len(), t_len);
        let batch = dhs.first().map_or(0, |d| d.nrows());
        let mut dh_next = Array2::<f64>::zeros((batch, hd));
        let mut dc_next = Array2::<f64>::zeros((batch, hd));
        let mut dxs = vec![Array2::<f64>::zeros((0, 0)); t_len];
        for t in (0..t_len).rev() {
            let s = &self.steps[t];
            let dh = &dhs[t] + &dh_next;
            let i = s.gates.slice(ndarray::s![.., 0..hd]);
            let f = s.gates.slice(ndarray::s![.., hd..2 * hd]);
            let g = s.gates.slice(ndarray::s![.., 2 * hd..3 * hd]);
            let o = s.gates.slice(ndarray::s![.., 3 * hd..]);
            let tc = s.c.mapv(f64::tanh);
            let dc = &dc_next + &(&dh * &o * &tc.mapv(|v| 1.0 - v * v));
            let mut dz = Array2::<f64>::zeros((batch, 4 * hd));
            dz.slice_mut(ndarray::s![.., 0..hd]).assign(&(&dc * &g * &i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(ndarray::s![.., hd..2 * hd]).assign(&(&dc * &s.c_prev * &f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(ndarray::s![.., 2 * hd..3 * hd]).assign(&(&dc * &i * &g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(ndarray::s![.., 3 * hd..]).assign(&(&dh * &tc * &o.mapv(|v| v * (1.0 - v))));
            self.wx.grad += &s.x.t().dot(&dz);
            self.wh.grad += &s.h_prev.t().dot(&dz);
            self.b.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            dxs[t] = dz.dot(&self.wx.value.t());
            dh_next = dz.dot(&self.wh.value.t());
            dc_next = &dc * &f;
        }
        dxs
    }
}

impl Visit for Lstm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "wx"), &mut self.wx);
        f(&join(prefix, "wh"), &mut self.wh);
        f(&join(prefix, "b"), &mut self.b);
    }
}
