//! Flat-parameter multilayer perceptron.
//!
//! Models and updates are both [`ParamVec`]s: one contiguous `f64` buffer plus
//! a [`LayerMap`] describing where each layer's weight and bias blocks live.
//! Weights are stored row-major with shape `(d_out, d_in)`, followed by the
//! `d_out` biases, layer after layer.
//!
//! Arithmetic helpers on [`ParamVec`] treat a length mismatch as programmer
//! error and panic; the user-facing operations ([`l2_distance`], [`forward`],
//! [`loss_and_grad`]) validate shapes and return [`Error::Shape`].

use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::rng_from;
use crate::{Error, Result};

/// Layer sizes of a fully connected network: input dim, hidden dims, class count.
///
/// Hidden layers use ReLU, the output layer is linear (logits).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    layer_sizes: Vec<usize>,
}

impl ModelArch {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config(format!(
                "model needs at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::config(format!("layer size at position {pos} is zero")));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    /// Number of dense layers (one less than the number of sizes).
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layer_map(&self) -> LayerMap {
        let mut spans = Vec::with_capacity(self.depth());
        let mut offset = 0;
        let depth = self.depth();
        for (i, w) in self.layer_sizes.windows(2).enumerate() {
            let (d_in, d_out) = (w[0], w[1]);
            let weights = offset..offset + d_in * d_out;
            let bias = weights.end..weights.end + d_out;
            offset = bias.end;
            spans.push(LayerSpan {
                name: if i + 1 == depth {
                    "output".to_string()
                } else {
                    format!("hidden{i}")
                },
                d_in,
                d_out,
                weights,
                bias,
            });
        }
        LayerMap { spans }
    }
}

/// Location of one dense layer inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    /// `hidden0`, `hidden1`, ... and `output` for the last layer.
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl LayerSpan {
    /// Weight block followed by bias block.
    pub fn range(&self) -> Range<usize> {
        self.weights.start..self.bias.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMap {
    spans: Vec<LayerSpan>,
}

impl LayerMap {
    pub fn spans(&self) -> &[LayerSpan] {
        &self.spans
    }

    pub fn total_len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.bias.end)
    }

    /// Looks a layer up by name (`hidden{i}`, `output`) or by its index (`"0"`, `"1"`, ...).
    pub fn find(&self, name: &str) -> Option<&LayerSpan> {
        self.spans
            .iter()
            .find(|s| s.name == name)
            .or_else(|| name.parse::<usize>().ok().and_then(|i| self.spans.get(i)))
    }

    pub fn output(&self) -> &LayerSpan {
        self.spans.last().expect("layer map is never empty")
    }
}

/// Flat parameter vector with its layer layout.
#[derive(Debug, Clone)]
pub struct ParamVec {
    values: Vec<f64>,
    layout: Arc<LayerMap>,
}

impl PartialEq for ParamVec {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl ParamVec {
    pub fn new(layout: Arc<LayerMap>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::shape(layout.total_len(), values.len()));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<LayerMap>) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { values, layout }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter length mismatch");
        Self {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn layout(&self) -> &Arc<LayerMap> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVec) -> f64 {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn sub(&self, other: &ParamVec) -> ParamVec {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &ParamVec) -> ParamVec {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    pub fn scaled(&self, factor: f64) -> ParamVec {
        self.with_values(self.values.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &ParamVec) {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    /// Copies the coordinates in `range` from `src`.
    pub fn copy_range_from(&mut self, src: &ParamVec, range: Range<usize>) {
        self.values[range.clone()].copy_from_slice(&src.values[range]);
    }

    pub fn slice(&self, range: Range<usize>) -> &[f64] {
        &self.values[range]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Inputs plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape(inputs.rows(), labels.len()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Scaled-uniform weights in `[-1/sqrt(d_in), 1/sqrt(d_in)]`, zero biases.
pub fn init_model(arch: &ModelArch, seed: u64) -> Result<ParamVec> {
    let arch = ModelArch::new(arch.layer_sizes.clone())?;
    let layout = Arc::new(arch.layer_map());
    let mut params = ParamVec::zeros(layout.clone());
    let mut rng = rng_from(seed);
    for span in layout.spans() {
        let bound = 1.0 / (span.d_in as f64).sqrt();
        for w in &mut params.values[span.weights.clone()] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

fn check_params(params: &ParamVec, arch: &ModelArch) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::shape(arch.param_count(), params.len()));
    }
    Ok(())
}

/// Dense layer: `out[b, o] = sum_i in[b, i] * w[o, i] + bias[o]`.
fn dense(input: &[f64], rows: usize, span: &LayerSpan, params: &[f64], relu: bool) -> Vec<f64> {
    let (d_in, d_out) = (span.d_in, span.d_out);
    let w = &params[span.weights.clone()];
    let bias = &params[span.bias.clone()];
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        let x = &input[r * d_in..(r + 1) * d_in];
        let y = &mut out[r * d_out..(r + 1) * d_out];
        for o in 0..d_out {
            let wr = &w[o * d_in..(o + 1) * d_in];
            let mut acc = bias[o];
            for i in 0..d_in {
                acc += wr[i] * x[i];
            }
            y[o] = if relu && acc < 0.0 { 0.0 } else { acc };
        }
    }
    out
}

/// Post-activation outputs of every layer; the last entry is the logits.
fn forward_all(params: &ParamVec, inputs: &Matrix) -> Vec<Vec<f64>> {
    let spans = params.layout.spans();
    let rows = inputs.rows();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(spans.len());
    for (l, span) in spans.iter().enumerate() {
        let input = if l == 0 { inputs.as_slice() } else { &acts[l - 1] };
        let out = dense(input, rows, span, &params.values, l + 1 < spans.len());
        acts.push(out);
    }
    acts
}

/// Computes logits for every input row.
pub fn forward(params: &ParamVec, arch: &ModelArch, inputs: &Matrix) -> Result<Matrix> {
    check_params(params, arch)?;
    if inputs.cols() != arch.input_dim() {
        return Err(Error::shape(arch.input_dim(), inputs.cols()));
    }
    let logits = forward_all(params, inputs).pop().expect("at least one layer");
    Matrix::new(inputs.rows(), arch.class_count(), logits)
}

/// Index of the largest logit per row (lowest index on ties).
pub fn predict(params: &ParamVec, arch: &ModelArch, inputs: &Matrix) -> Result<Vec<usize>> {
    let logits = forward(params, arch, inputs)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Mean softmax cross-entropy over the batch, without the gradient.
pub fn loss(params: &ParamVec, arch: &ModelArch, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let logits = forward(params, arch, &batch.inputs)?;
    let classes = arch.class_count();
    let mut total = 0.0;
    for (b, &label) in batch.labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::data(format!("label {label} out of range for {classes} classes")));
        }
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / batch.len() as f64)
}

/// Mean softmax cross-entropy over the batch and its gradient.
pub fn loss_and_grad(params: &ParamVec, arch: &ModelArch, batch: &Batch) -> Result<(f64, ParamVec)> {
    check_params(params, arch)?;
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    if batch.inputs.cols() != arch.input_dim() {
        return Err(Error::shape(arch.input_dim(), batch.inputs.cols()));
    }
    let classes = arch.class_count();
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::data(format!("label {bad} out of range for {classes} classes")));
    }

    let rows = batch.len();
    let spans = params.layout.spans();
    let acts = forward_all(params, &batch.inputs);
    let logits = acts.last().expect("at least one layer");

    // dL/dlogits = (softmax - onehot) / rows
    let mut delta = vec![0.0; rows * classes];
    let mut loss = 0.0;
    for r in 0..rows {
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        let label = batch.labels[r];
        loss += log_sum - z[label];
        let d = &mut delta[r * classes..(r + 1) * classes];
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = (z[j] - log_sum).exp() / rows as f64;
        }
        d[label] -= 1.0 / rows as f64;
    }
    loss /= rows as f64;

    let mut grad = params.zeros_like();
    for l in (0..spans.len()).rev() {
        let span = &spans[l];
        let (d_in, d_out) = (span.d_in, span.d_out);
        let input = if l == 0 { batch.inputs.as_slice() } else { &acts[l - 1] };
        {
            let g = &mut grad.values;
            for r in 0..rows {
                let dr = &delta[r * d_out..(r + 1) * d_out];
                let x = &input[r * d_in..(r + 1) * d_in];
                for o in 0..d_out {
                    let dv = dr[o];
                    if dv == 0.0 {
                        continue;
                    }
                    let gw = &mut g[span.weights.start + o * d_in..span.weights.start + (o + 1) * d_in];
                    for i in 0..d_in {
                        gw[i] += dv * x[i];
                    }
                    g[span.bias.start + o] += dv;
                }
            }
        }
        if l > 0 {
            let w = &params.values[span.weights.clone()];
            let prev = &acts[l - 1];
            let mut next = vec![0.0; rows * d_in];
            for r in 0..rows {
                let dr = &delta[r * d_out..(r + 1) * d_out];
                let nr = &mut next[r * d_in..(r + 1) * d_in];
                for o in 0..d_out {
                    let dv = dr[o];
                    if dv == 0.0 {
                        continue;
                    }
                    let wr = &w[o * d_in..(o + 1) * d_in];
                    for i in 0..d_in {
                        nr[i] += dv * wr[i];
                    }
                }
                // ReLU derivative on the previous layer's pre-activation
                for (i, v) in nr.iter_mut().enumerate() {
                    if prev[r * d_in + i] <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = next;
        }
    }
    Ok((loss, grad))
}

/// Local SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        Ok(())
    }
}

enum Budget {
    Epochs(usize),
    Batches(usize),
}

/// Plain minibatch SGD; `hook` runs on the parameters after every step.
pub fn sgd_train(
    params: &ParamVec,
    arch: &ModelArch,
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    hook: &mut dyn FnMut(&mut ParamVec),
) -> Result<ParamVec> {
    run_sgd(params, arch, dataset, cfg, seed, Budget::Epochs(cfg.epochs), hook)
}

/// Like [`sgd_train`] but stops after exactly `batches` steps, reshuffling at
/// every pass over the data.
pub fn sgd_train_batches(
    params: &ParamVec,
    arch: &ModelArch,
    dataset: &Dataset,
    cfg: &TrainConfig,
    batches: usize,
    seed: u64,
    hook: &mut dyn FnMut(&mut ParamVec),
) -> Result<ParamVec> {
    run_sgd(params, arch, dataset, cfg, seed, Budget::Batches(batches), hook)
}

fn run_sgd(
    params: &ParamVec,
    arch: &ModelArch,
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    budget: Budget,
    hook: &mut dyn FnMut(&mut ParamVec),
) -> Result<ParamVec> {
    cfg.validate()?;
    check_params(params, arch)?;
    if dataset.is_empty() {
        return Err(Error::data("cannot train on an empty dataset"));
    }
    let mut model = params.clone();
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut steps_left = match budget {
        Budget::Epochs(e) => e.saturating_mul(dataset.len().div_ceil(cfg.batch_size)),
        Budget::Batches(b) => b,
    };
    while steps_left > 0 {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if steps_left == 0 {
                break;
            }
            let batch = dataset.batch(chunk);
            let (_, grad) = loss_and_grad(&model, arch, &batch)?;
            model.add_scaled(-cfg.lr, &grad);
            hook(&mut model);
            steps_left -= 1;
        }
    }
    Ok(model)
}

/// Euclidean distance between two parameter vectors.
pub fn l2_distance(a: &ParamVec, b: &ParamVec) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Projects `m` onto the L2 ball of `radius` around `center`.
///
/// Points already inside the ball are returned unchanged.
pub fn project_to_ball(m: &ParamVec, center: &ParamVec, radius: f64) -> ParamVec {
    let mut out = m.clone();
    project_in_place(&mut out, center, radius);
    out
}

pub fn project_in_place(m: &mut ParamVec, center: &ParamVec, radius: f64) {
    assert_eq!(m.len(), center.len(), "parameter length mismatch");
    let radius = radius.max(0.0);
    let dist = m
        .values
        .iter()
        .zip(&center.values)
        .map(|(x, c)| (x - c) * (x - c))
        .sum::<f64>()
        .sqrt();
    // A point that was just projected can measure a rounding error outside;
    // leave it alone so projection stays idempotent.
    if dist <= radius * (1.0 + 1e-12) {
        return;
    }
    let scale = radius / dist;
    for (x, c) in m.values.iter_mut().zip(&center.values) {
        *x = c + (*x - c) * scale;
    }
}
