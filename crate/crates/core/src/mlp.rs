//! Fully connected tanh network that regresses optimal commands from features.
//!
//! Inputs and targets are standardized with per-component statistics stored
//! in the model, so callers always work in physical (nondimensional) units.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{parse_field, read_header, stream_rng, Dataset, Stats};
use crate::error::{GuidanceError, Result};

const MAGIC: &[u8; 4] = b"CGM1";

/// Samples per gradient shard; shards are reduced in index order.
const SHARD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("tanh")
    }
}

impl FromStr for Activation {
    type Err = GuidanceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            other => Err(GuidanceError::Format(format!("unknown activation `{other}`"))),
        }
    }
}

/// Network parameters plus normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    /// Row-major `out × in` matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub feature_stats: Stats,
    pub target_stats: Stats,
    /// Free-form header entries (training settings, provenance).
    pub metadata: BTreeMap<String, String>,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(m: &MlpModel) -> Self {
        Self {
            weights: m.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: m.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().flatten().for_each(|x| *x *= s);
        self.biases.iter_mut().flatten().for_each(|x| *x *= s);
    }

    /// Flattened in the same order as [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl MlpModel {
    /// Random initialization: weights uniform in `±1/√fan_in`, zero biases.
    pub fn init(layer_dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(GuidanceError::BadArchitecture(format!(
                "need at least input and output layers, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(GuidanceError::BadArchitecture(format!(
                "layer widths must be positive, got {layer_dims:?}"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        let dim_in = layer_dims[0];
        let dim_out = layer_dims[layer_dims.len() - 1];
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation: Activation::Tanh,
            feature_stats: Stats::identity(dim_in),
            target_stats: Stats::identity(dim_out),
            metadata: BTreeMap::new(),
        })
    }

    pub fn dim_in(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn dim_out(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(GuidanceError::DimensionMismatch {
                expected: self.parameter_count(),
                actual: params.len(),
            });
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            b.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim_in() {
            return Err(GuidanceError::DimensionMismatch {
                expected: self.dim_in(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Network output in normalized target space for a normalized input.
    fn forward_normalized(&self, z: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(z.to_vec());
        let last = self.n_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = &acts[l];
            let fan_in = input.len();
            let mut out: Vec<f64> = b.clone();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(fan_in)) {
                *o += row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
            }
            if l < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
    }

    /// Commands predicted for one feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let mut acts = Vec::with_capacity(self.layer_dims.len());
        self.forward_normalized(&self.feature_stats.normalize(features), &mut acts);
        Ok(self.target_stats.denormalize(&acts[acts.len() - 1]))
    }

    /// Mean squared error over normalized targets and its parameter gradient.
    pub fn loss_and_gradient(&self, features: &[&[f64]], targets: &[&[f64]]) -> Result<(f64, Gradients)> {
        if features.is_empty() || features.len() != targets.len() {
            return Err(GuidanceError::DimensionMismatch {
                expected: features.len().max(1),
                actual: targets.len(),
            });
        }
        for (x, y) in features.iter().zip(targets) {
            self.check_input(x)?;
            if y.len() != self.dim_out() {
                return Err(GuidanceError::DimensionMismatch {
                    expected: self.dim_out(),
                    actual: y.len(),
                });
            }
        }
        let shards: Vec<(f64, Gradients)> = features
            .par_chunks(SHARD)
            .zip(targets.par_chunks(SHARD))
            .map(|(xs, ys)| self.shard_sse(xs, ys))
            .collect();
        let mut grads = Gradients::zeros_like(self);
        let mut sse = 0.0;
        for (s, g) in &shards {
            sse += s;
            grads.add_assign(g);
        }
        let denom = (features.len() * self.dim_out()) as f64;
        grads.scale(1.0 / denom);
        Ok((sse / denom, grads))
    }

    /// Sum of squared errors and unscaled gradient (of ½·2·SSE) over a shard.
    fn shard_sse(&self, xs: &[&[f64]], ys: &[&[f64]]) -> (f64, Gradients) {
        let mut grads = Gradients::zeros_like(self);
        let mut acts = Vec::with_capacity(self.layer_dims.len());
        let mut sse = 0.0;
        let n_layers = self.n_layers();
        for (x, y) in xs.iter().zip(ys) {
            self.forward_normalized(&self.feature_stats.normalize(x), &mut acts);
            let target = self.target_stats.normalize(y);
            let output = &acts[n_layers];
            // d(Σ e²)/d(out) = 2e
            let mut delta: Vec<f64> = output
                .iter()
                .zip(&target)
                .map(|(o, t)| {
                    let e = o - t;
                    sse += e * e;
                    2.0 * e
                })
                .collect();
            for l in (0..n_layers).rev() {
                let input = &acts[l];
                let fan_in = input.len();
                let gw = &mut grads.weights[l];
                for (o, d) in delta.iter().enumerate() {
                    grads.biases[l][o] += d;
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
                }
                if l > 0 {
                    let w = &self.weights[l];
                    let mut back = vec![0.0; fan_in];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &w[o * fan_in..(o + 1) * fan_in];
                        back.iter_mut().zip(row).for_each(|(b, wv)| *b += d * wv);
                    }
                    // tanh' = 1 - a²
                    back.iter_mut().zip(input).for_each(|(b, a)| *b *= 1.0 - a * a);
                    delta = back;
                }
            }
        }
        (sse, grads)
    }

    /// Mean squared error (normalized targets) over a set of samples.
    pub fn mse(&self, features: &[&[f64]], targets: &[&[f64]]) -> Result<f64> {
        Ok(self.loss_and_gradient(features, targets)?.0)
    }

    fn header(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut h = vec![
            (
                "layer_dims".to_string(),
                self.layer_dims
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("activation".into(), self.activation.to_string()),
            ("feature_mean".into(), join(&self.feature_stats.mean)),
            ("feature_std".into(), join(&self.feature_stats.std)),
            ("target_mean".into(), join(&self.target_stats.mean)),
            ("target_std".into(), join(&self.target_stats.std)),
        ];
        h.extend(self.metadata.iter().map(|(k, v)| (k.clone(), v.clone())));
        h
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(b"\n")?;
        for (k, v) in self.header() {
            writeln!(w, "{k}={v}")?;
        }
        w.write_all(b"\n")?;
        for v in self.parameters() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = read_header(&mut r, MAGIC)?;
        let mut take = |key: &str| {
            header
                .remove(key)
                .ok_or_else(|| GuidanceError::Format(format!("missing header key `{key}`")))
        };
        let list =
            |text: String, key: &str| -> Result<Vec<f64>> { text.split(',').map(|v| parse_field(v, key)).collect() };
        let layer_dims: Vec<usize> = take("layer_dims")?
            .split(',')
            .map(|v| parse_field(v, "layer_dims"))
            .collect::<Result<_>>()?;
        let activation: Activation = take("activation")?.parse()?;
        let feature_stats = Stats {
            mean: list(take("feature_mean")?, "feature_mean")?,
            std: list(take("feature_std")?, "feature_std")?,
        };
        let target_stats = Stats {
            mean: list(take("target_mean")?, "target_mean")?,
            std: list(take("target_std")?, "target_std")?,
        };

        let mut model =
            MlpModel::init(&layer_dims, &mut stream_rng(0, 0)).map_err(|e| GuidanceError::Format(e.to_string()))?;
        let (dim_in, dim_out) = (model.dim_in(), model.dim_out());
        if feature_stats.mean.len() != dim_in
            || feature_stats.std.len() != dim_in
            || target_stats.mean.len() != dim_out
            || target_stats.std.len() != dim_out
        {
            return Err(GuidanceError::Format(
                "normalization statistics do not match layer_dims".into(),
            ));
        }
        if feature_stats.std.iter().chain(&target_stats.std).any(|s| !(*s > 0.0)) {
            return Err(GuidanceError::Format("normalization spreads must be positive".into()));
        }

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != 8 * model.parameter_count() {
            return Err(GuidanceError::Format(format!(
                "payload has {} bytes, layer_dims need {}",
                payload.len(),
                8 * model.parameter_count()
            )));
        }
        let params: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        model.set_parameters(&params)?;
        model.activation = activation;
        model.feature_stats = feature_stats;
        model.target_stats = target_stats;
        model.metadata = header;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(File::open(path)?)
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Multiplier applied to the learning rate after `decay_patience` flat epochs.
    pub lr_decay: f64,
    pub decay_patience: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 200,
            validation_fraction: 0.1,
            patience: 20,
            lr_decay: 0.5,
            decay_patience: 5,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(GuidanceError::InvalidConfig(
                "validation_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(GuidanceError::InvalidConfig(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(GuidanceError::InvalidConfig(
                "learning_rate must be positive and lr_decay in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn record(&self, meta: &mut BTreeMap<String, String>) {
        meta.insert("train.learning_rate".into(), self.learning_rate.to_string());
        meta.insert("train.batch_size".into(), self.batch_size.to_string());
        meta.insert("train.max_epochs".into(), self.max_epochs.to_string());
        meta.insert("train.validation_fraction".into(), self.validation_fraction.to_string());
        meta.insert("train.patience".into(), self.patience.to_string());
        meta.insert("train.lr_decay".into(), self.lr_decay.to_string());
        meta.insert("train.decay_patience".into(), self.decay_patience.to_string());
        meta.insert("train.seed".into(), self.rng_seed.to_string());
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub best_val_mse: f64,
    pub learning_rate: f64,
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,train_mse,val_mse")?;
    for h in history {
        writeln!(w, "{},{},{}", h.epoch, h.train_mse, h.val_mse)?;
    }
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Splits sample indices into shuffled training and validation sets.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, u64::MAX));
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let train = idx.split_off(n_val);
    (train, idx)
}

/// Mini-batch Adam on the dataset; returns the best-validation parameters.
///
/// The model's normalization statistics are replaced by the dataset's.
pub fn train(model: &MlpModel, data: &Dataset, tc: &TrainConfig) -> Result<(MlpModel, Vec<EpochRecord>)> {
    tc.validate()?;
    if data.is_empty() {
        return Err(GuidanceError::InvalidConfig("dataset is empty".into()));
    }
    if data.dim_in() != model.dim_in() || data.dim_out() != model.dim_out() {
        return Err(GuidanceError::DimensionMismatch {
            expected: model.dim_in(),
            actual: data.dim_in(),
        });
    }
    let mut model = model.clone();
    model.feature_stats = data.feature_stats.clone();
    model.target_stats = data.command_stats.clone();
    tc.record(&mut model.metadata);

    let features: Vec<&[f64]> = data.samples.iter().map(|s| s.features.as_slice()).collect();
    let targets: Vec<&[f64]> = data.samples.iter().map(|s| s.commands.as_slice()).collect();
    let (mut train_idx, val_idx) = split_indices(data.len(), tc.validation_fraction, tc.rng_seed);
    let val_x: Vec<&[f64]> = val_idx.iter().map(|&i| features[i]).collect();
    let val_y: Vec<&[f64]> = val_idx.iter().map(|&i| targets[i]).collect();

    let mut params = model.parameters();
    let mut adam = Adam::new(params.len());
    let mut shuffle_rng = stream_rng(tc.rng_seed, 0);
    let mut lr = tc.learning_rate;
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut since_decay = 0;
    let mut history = Vec::new();
    let mut bx: Vec<&[f64]> = Vec::with_capacity(tc.batch_size);
    let mut by: Vec<&[f64]> = Vec::with_capacity(tc.batch_size);

    for epoch in 1..=tc.max_epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut sse = 0.0;
        for batch in train_idx.chunks(tc.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(batch.iter().map(|&i| features[i]));
            by.extend(batch.iter().map(|&i| targets[i]));
            let (mse, grads) = model.loss_and_gradient(&bx, &by)?;
            sse += mse * batch.len() as f64;
            adam.step(&mut params, &grads.flatten(), lr);
            model.set_parameters(&params)?;
        }
        let train_mse = sse / train_idx.len() as f64;
        let val_mse = if val_x.is_empty() {
            train_mse
        } else {
            model.mse(&val_x, &val_y)?
        };
        if !val_mse.is_finite() {
            return Err(GuidanceError::InvalidConfig(format!(
                "training diverged at epoch {epoch}"
            )));
        }
        if val_mse < best_val {
            best_val = val_mse;
            best = model.clone();
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if tc.lr_decay < 1.0 && since_decay >= tc.decay_patience {
                lr *= tc.lr_decay;
                since_decay = 0;
            }
        }
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            best_val_mse: best_val,
            learning_rate: lr,
        });
        if since_best >= tc.patience {
            break;
        }
    }
    best.metadata
        .insert("train.epochs_run".into(), history.len().to_string());
    best.metadata.insert("train.best_val_mse".into(), best_val.to_string());
    Ok((best, history))
}
