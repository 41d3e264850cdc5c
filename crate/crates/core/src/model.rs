//! Fully connected echo-time regressor trained with Adam on MSE.
//!
//! The default network maps the 1534-dimensional ILD/IPD vector through
//! hidden ReLU layers of width 500, 300 and 50 to the three echo times.
//! Hidden layers use inverted dropout during training. Inputs and targets
//! are z-scored with statistics from the training split.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FEATURE_DIM;
use crate::error::{Error, Result};
use crate::geometry::EchoTimes;

pub const OUTPUTS: usize = 3;
pub const DEFAULT_HIDDEN: [usize; 3] = [500, 300, 50];
pub const MODEL_MAGIC: &[u8; 4] = b"MIRM";
pub const MODEL_VERSION: u32 = 1;

/// `C = op(A)·op(B) + beta·C` for row-major matrices; `op(A)` is m×k and
/// `op(B)` is k×n.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice length checks above cover every index addressed
    // through these strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// One affine layer; `weights` is `inputs × outputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self { layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() }
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(sizes);
        for layer in &mut p.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            layer.weights.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        p
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn blocks(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().flatten().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &MlpParams) -> bool {
        self.sizes() == other.sizes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Inverted dropout with the given drop probability on hidden layers.
    Train { dropout: f64 },
    Infer,
}

enum Masks<'a, R> {
    None,
    Sample(f64, &'a mut R),
    Fixed(&'a [Vec<f64>]),
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Layer inputs: `inputs[0]` is the batch, `inputs[l]` the (dropped-out) output of hidden layer `l-1`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    /// Per-unit dropout multipliers (0 or 1/(1-p)), one per hidden layer; empty in infer mode.
    pub masks: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

fn forward_impl<R: Rng>(params: &MlpParams, x: &[f64], batch: usize, mut masks: Masks<'_, R>) -> Result<ForwardCache> {
    let dim = params.input_dim();
    if x.len() != batch * dim || batch == 0 {
        return Err(Error::invalid(format!("input has {} values, expected {batch} × {dim}", x.len())));
    }
    let n_layers = params.layers.len();
    let mut inputs = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(n_layers - 1);
    let mut used_masks = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = Vec::with_capacity(batch * layer.outputs);
        for _ in 0..batch {
            z.extend_from_slice(&layer.bias);
        }
        gemm(batch, layer.inputs, layer.outputs, &inputs[l], false, &layer.weights, false, 1.0, &mut z);
        if l + 1 == n_layers {
            return Ok(ForwardCache { batch, inputs, pre, masks: used_masks, output: z });
        }
        let mut h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let mask = match &mut masks {
            Masks::None => None,
            Masks::Sample(p, rng) => {
                let keep = 1.0 / (1.0 - *p);
                let p = *p;
                Some((0..h.len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect::<Vec<_>>())
            }
            Masks::Fixed(m) => Some(m[l].clone()),
        };
        if let Some(mask) = mask {
            h.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            used_masks.push(mask);
        }
        pre.push(z);
        inputs.push(h);
    }
    unreachable!("network has at least one layer")
}

/// Batched forward pass over `batch` row-major input rows.
pub fn forward_batch(params: &MlpParams, x: &[f64], batch: usize, mode: Mode, rng: &mut impl Rng) -> Result<ForwardCache> {
    match mode {
        Mode::Infer => forward_impl(params, x, batch, Masks::<ChaCha8Rng>::None),
        Mode::Train { dropout } => {
            if !(0.0..1.0).contains(&dropout) {
                return Err(Error::invalid("dropout must lie in [0, 1)"));
            }
            forward_impl(params, x, batch, Masks::Sample(dropout, rng))
        }
    }
}

/// Forward pass reusing the dropout multipliers of an earlier pass.
pub fn forward_with_masks(params: &MlpParams, x: &[f64], batch: usize, masks: &[Vec<f64>]) -> Result<ForwardCache> {
    if masks.is_empty() {
        forward_impl(params, x, batch, Masks::<ChaCha8Rng>::None)
    } else {
        forward_impl(params, x, batch, Masks::<ChaCha8Rng>::Fixed(masks))
    }
}

/// Single-sample forward pass.
pub fn forward(x: &[f64], params: &MlpParams, mode: Mode, rng: &mut impl Rng) -> Result<(Vec<f64>, ForwardCache)> {
    let cache = forward_batch(params, x, 1, mode, rng)?;
    Ok((cache.output.clone(), cache))
}

/// Mean squared error over every output of every row.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

/// Exact gradients of the batch MSE through the recorded pass.
pub fn backward(params: &MlpParams, cache: &ForwardCache, target: &[f64]) -> Result<MlpParams> {
    let batch = cache.batch;
    if target.len() != cache.output.len() {
        return Err(Error::invalid("target shape does not match the output"));
    }
    let mut grads = MlpParams::zeros(&params.sizes());
    let scale = 2.0 / cache.output.len() as f64;
    let mut dz: Vec<f64> = cache.output.iter().zip(target).map(|(p, t)| scale * (p - t)).collect();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let g = &mut grads.layers[l];
        gemm(layer.inputs, batch, layer.outputs, &cache.inputs[l], true, &dz, false, 0.0, &mut g.weights);
        for row in dz.chunks_exact(layer.outputs) {
            g.bias.iter_mut().zip(row).for_each(|(b, d)| *b += d);
        }
        if l == 0 {
            break;
        }
        let mut da = vec![0.0; batch * layer.inputs];
        gemm(batch, layer.outputs, layer.inputs, &dz, false, &layer.weights, true, 0.0, &mut da);
        let pre = &cache.pre[l - 1];
        match cache.masks.get(l - 1) {
            Some(mask) => {
                for ((d, z), m) in da.iter_mut().zip(pre).zip(mask) {
                    *d *= if *z > 0.0 { *m } else { 0.0 };
                }
            }
            None => {
                for (d, z) in da.iter_mut().zip(pre) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
        }
        dz = da;
    }
    Ok(grads)
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        let zeros = MlpParams::zeros(&params.sizes());
        Self { m: zeros.clone(), v: zeros, step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::invalid("parameter, gradient and optimizer shapes differ"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .blocks_mut()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Per-target RMSE divided by the standard deviation of the true targets.
pub fn nrmse(preds: &[[f64; 3]], targets: &[[f64; 3]]) -> Result<[f64; 3]> {
    if preds.len() != targets.len() {
        return Err(Error::invalid("prediction and target counts differ"));
    }
    if targets.len() < 2 {
        return Err(Error::invalid("nRMSE needs at least two samples"));
    }
    let n = targets.len() as f64;
    let mut out = [0.0; 3];
    for (j, slot) in out.iter_mut().enumerate() {
        let mean = targets.iter().map(|t| t[j]).sum::<f64>() / n;
        let var = targets.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(Error::invalid(format!("target {j} has zero variance")));
        }
        let mse = preds.iter().zip(targets).map(|(p, t)| (p[j] - t[j]).powi(2)).sum::<f64>() / n;
        *slot = (mse / var).sqrt();
    }
    Ok(out)
}

/// Z-score statistics for inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: [f64; 3],
    pub out_std: [f64; 3],
}

impl Normalizer {
    /// Statistics of `data`; dimensions with (near) zero spread get std 1.
    pub fn fit(data: &Samples) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("cannot fit a normalizer on an empty set"));
        }
        let n = data.len() as f64;
        let d = data.dim;
        let mut in_mean = vec![0.0; d];
        for row in data.rows() {
            in_mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        in_mean.iter_mut().for_each(|m| *m /= n);
        let mut in_var = vec![0.0; d];
        for row in data.rows() {
            for ((s, v), m) in in_var.iter_mut().zip(row).zip(&in_mean) {
                *s += (v - m).powi(2);
            }
        }
        let fix = |s: f64| if s > 1e-12 { s } else { 1.0 };
        let in_std = in_var.into_iter().map(|v| fix((v / n).sqrt())).collect();
        let mut out_mean = [0.0; 3];
        let mut out_std = [0.0; 3];
        for j in 0..3 {
            out_mean[j] = data.y.iter().map(|t| t[j]).sum::<f64>() / n;
            let var = data.y.iter().map(|t| (t[j] - out_mean[j]).powi(2)).sum::<f64>() / n;
            out_std[j] = fix(var.sqrt());
        }
        Ok(Self { in_mean, in_std, out_mean, out_std })
    }

    pub fn identity(dim: usize) -> Self {
        Self { in_mean: vec![0.0; dim], in_std: vec![1.0; dim], out_mean: [0.0; 3], out_std: [1.0; 3] }
    }

    pub fn normalize_input_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.in_mean).zip(&self.in_std) {
            *o = (v - m) / s;
        }
    }

    pub fn normalize_target(&self, t: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|j| (t[j] - self.out_mean[j]) / self.out_std[j])
    }

    pub fn denormalize_target(&self, t: &[f64]) -> [f64; 3] {
        std::array::from_fn(|j| t[j] * self.out_std[j] + self.out_mean[j])
    }
}

/// Row-major feature matrix with its targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Samples {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<[f64; 3]>,
}

impl Samples {
    pub fn new(dim: usize) -> Self {
        Self { dim, x: Vec::new(), y: Vec::new() }
    }

    pub fn push(&mut self, x: &[f64], y: [f64; 3]) {
        assert_eq!(x.len(), self.dim);
        self.x.extend_from_slice(x);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.dim)
    }

    pub fn subset(&self, indices: &[usize]) -> Samples {
        let mut s = Samples::new(self.dim);
        for &i in indices {
            s.push(self.row(i), self.y[i]);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    pub patience: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 200,
            dropout: 0.3,
            patience: 20,
            learning_rate: 1e-3,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(0.0..1.0).contains(&self.dropout) || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("batch size must be ≥ 1, dropout in [0, 1), learning rate > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nrmse: [f64; 3],
}

/// A trained regressor together with everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: MlpParams,
    pub normalizer: Normalizer,
    /// Validation nRMSE per target at the selected epoch.
    pub val_nrmse: [f64; 3],
    /// Validation mean squared error per target, seconds².
    pub val_mse: [f64; 3],
    pub config: TrainConfig,
}

const INFER_CHUNK: usize = 256;

impl Model {
    /// Model whose output is `v` for every input (all weights zero).
    pub fn constant(v: EchoTimes, val_mse: [f64; 3]) -> Self {
        let config = TrainConfig::default();
        let mut sizes = vec![FEATURE_DIM];
        sizes.extend(&config.hidden);
        sizes.push(OUTPUTS);
        let normalizer = Normalizer { out_mean: v.to_array(), ..Normalizer::identity(FEATURE_DIM) };
        Self { params: MlpParams::zeros(&sizes), normalizer, val_nrmse: [0.0; 3], val_mse, config }
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Gaussian widths for aggregation: the validation MSE of each target.
    pub fn variances(&self) -> [f64; 3] {
        self.val_mse.map(|v| v.max(1e-16))
    }

    pub fn predict_batch(&self, x: &[f64], batch: usize) -> Result<Vec<[f64; 3]>> {
        let dim = self.input_dim();
        if x.len() != batch * dim {
            return Err(Error::invalid(format!("expected {batch} rows of {dim} features")));
        }
        let mut out = Vec::with_capacity(batch);
        let mut buf = vec![0.0; INFER_CHUNK * dim];
        for chunk in x.chunks(INFER_CHUNK * dim) {
            let rows = chunk.len() / dim;
            for (src, dst) in chunk.chunks_exact(dim).zip(buf.chunks_exact_mut(dim)) {
                self.normalizer.normalize_input_into(src, dst);
            }
            // Rows are independent, so chunking does not change results.
            let cache = forward_impl(&self.params, &buf[..rows * dim], rows, Masks::<ChaCha8Rng>::None)?;
            out.extend(cache.output.chunks_exact(OUTPUTS).map(|o| self.normalizer.denormalize_target(o)));
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<EchoTimes> {
        Ok(EchoTimes::from_array(self.predict_batch(x, 1)?[0]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            layer_sizes: self.params.sizes(),
            config: self.config.clone(),
            val_nrmse: self.val_nrmse,
            val_mse: self.val_mse,
            normalizer_out_mean: self.normalizer.out_mean,
            normalizer_out_std: self.normalizer.out_std,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.write_all(&json)?;
        let blocks = self
            .params
            .blocks()
            .chain([&self.normalizer.in_mean, &self.normalizer.in_std]);
        for block in blocks {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::format("not a model file (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::format(format!("unsupported model version {version}")));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let header: ModelHeader = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::format(format!("bad model header: {e}")))?;
        let sizes = &header.layer_sizes;
        if sizes.len() < 2 || sizes[sizes.len() - 1] != OUTPUTS || sizes.contains(&0) {
            return Err(Error::format("invalid layer sizes in model header"));
        }
        let mut params = MlpParams::zeros(sizes);
        for block in params.blocks_mut() {
            r.read_f64s(block)?;
        }
        let dim = sizes[0];
        let mut in_mean = vec![0.0; dim];
        let mut in_std = vec![0.0; dim];
        r.read_f64s(&mut in_mean)?;
        r.read_f64s(&mut in_std)?;
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after model parameters"));
        }
        if !params.is_finite() || in_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::format("model contains invalid parameters"));
        }
        Ok(Self {
            params,
            normalizer: Normalizer {
                in_mean,
                in_std,
                out_mean: header.normalizer_out_mean,
                out_std: header.normalizer_out_std,
            },
            val_nrmse: header.val_nrmse,
            val_mse: header.val_mse,
            config: header.config,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    layer_sizes: Vec<usize>,
    config: TrainConfig,
    val_nrmse: [f64; 3],
    val_mse: [f64; 3],
    normalizer_out_mean: [f64; 3],
    normalizer_out_std: [f64; 3],
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format("file is truncated"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn read_f64s(&mut self, out: &mut [f64]) -> Result<()> {
        let raw = self.take(out.len() * 8)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *o = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn train(train_set: &Samples, val_set: &Samples, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(train_set, val_set, config, |_| {})
}

/// Minibatch Adam with early stopping on mean validation nRMSE; returns the
/// best validation epoch's parameters.
pub fn train_with_progress(
    train_set: &Samples,
    val_set: &Samples,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.len() < 2 {
        return Err(Error::invalid("training needs a non-empty train split and at least two validation samples"));
    }
    if train_set.dim != val_set.dim {
        return Err(Error::invalid("train and validation dimensions differ"));
    }
    let dim = train_set.dim;
    let normalizer = Normalizer::fit(train_set)?;
    let mut xn = vec![0.0; train_set.x.len()];
    for (src, dst) in train_set.rows().zip(xn.chunks_exact_mut(dim)) {
        normalizer.normalize_input_into(src, dst);
    }
    let yn: Vec<[f64; 3]> = train_set.y.iter().map(|t| normalizer.normalize_target(t)).collect();

    let mut sizes = vec![dim];
    sizes.extend(&config.hidden);
    sizes.push(OUTPUTS);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MlpParams::init(&sizes, &mut rng);
    let mut adam = AdamState::new(&params, config.learning_rate);

    let mut model = Model {
        params: params.clone(),
        normalizer,
        val_nrmse: [f64::INFINITY; 3],
        val_mse: [f64::INFINITY; 3],
        config: config.clone(),
    };
    let mut best_params = params.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut xb = Vec::with_capacity(config.batch_size * dim);
    let mut yb = Vec::with_capacity(config.batch_size * OUTPUTS);
    let mode = Mode::Train { dropout: config.dropout };

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            xb.clear();
            yb.clear();
            for &i in idx {
                xb.extend_from_slice(&xn[i * dim..(i + 1) * dim]);
                yb.extend_from_slice(&yn[i]);
            }
            let cache = forward_batch(&params, &xb, idx.len(), mode, &mut rng)?;
            loss_sum += loss_mse(&cache.output, &yb) * idx.len() as f64;
            let grads = backward(&params, &cache, &yb)?;
            adam_step(&mut params, &grads, &mut adam)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Internal(format!("training diverged at epoch {epoch}")));
        }

        model.params = params.clone();
        let preds = model.predict_batch(&val_set.x, val_set.len())?;
        let val = nrmse(&preds, &val_set.y)?;
        let record = EpochRecord { epoch, train_loss, val_nrmse: val };
        on_epoch(&record);
        history.push(record);

        let score = val.iter().sum::<f64>() / 3.0;
        if score < best_score {
            best_score = score;
            best_epoch = epoch;
            model.val_nrmse = val;
            model.val_mse = mse_per_target(&preds, &val_set.y);
            best_params = params.clone();
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome { model, history, best_epoch })
}

fn mse_per_target(preds: &[[f64; 3]], targets: &[[f64; 3]]) -> [f64; 3] {
    let n = targets.len() as f64;
    std::array::from_fn(|j| preds.iter().zip(targets).map(|(p, t)| (p[j] - t[j]).powi(2)).sum::<f64>() / n)
}
