//! Dense ReLU network with a softmax/cross-entropy head, trained by minibatch SGD.
//!
//! Parameters live in one flat vector. Each layer contributes its weight matrix
//! (`out × in`, row-major) followed by its bias vector.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layer_sizes: Vec<usize>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub prox_mu: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", format!("must be positive, got {}", self.learning_rate)));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::param("prox_mu", format!("must be nonnegative, got {}", self.prox_mu)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weight_at: usize,
    bias_at: usize,
}

fn check_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::InvalidLayerSizes(layer_sizes.to_vec()));
    }
    Ok(())
}

impl ModelParams {
    pub fn param_count(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut model.weights[layer.weight_at..layer.bias_at] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights: vec![0.0; Self::param_count(layer_sizes)],
        })
    }

    pub fn from_weights(layer_sizes: &[usize], weights: Vec<f64>) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        let expected = Self::param_count(layer_sizes);
        if weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn same_shape(&self, other: &ModelParams) -> Result<()> {
        if self.layer_sizes != other.layer_sizes {
            return Err(Error::ShapeMismatch {
                left: self.layer_sizes.clone(),
                right: other.layer_sizes.clone(),
            });
        }
        Ok(())
    }

    fn layers(&self) -> Vec<Layer> {
        let mut at = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_at: at,
                    bias_at: at + w[0] * w[1],
                };
                at = layer.bias_at + w[1];
                layer
            })
            .collect()
    }
}

/// Per-sample activations kept for the backward pass.
struct Trace {
    layers: Vec<Layer>,
    /// `acts[0]` is the input; `acts[l]` the post-activation output of layer `l - 1`;
    /// the last entry holds softmax probabilities.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    fn new(model: &ModelParams) -> Self {
        Self {
            layers: model.layers(),
            acts: model.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn run(&mut self, weights: &[f64], x: &[f64]) -> &[f64] {
        self.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, next) = self.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for (j, o) in out.iter_mut().enumerate() {
                let row = &weights[layer.weight_at + j * layer.fan_in..layer.weight_at + (j + 1) * layer.fan_in];
                let z = weights[layer.bias_at + j] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                *o = if l == last { z } else { z.max(0.0) };
            }
        }
        let out = self.acts.last_mut().expect("output layer");
        softmax_in_place(out);
        out
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn check_input(model: &ModelParams, data: &DataView) -> Result<()> {
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: data.dim(),
        });
    }
    Ok(())
}

/// Class probabilities for each row of a row-major feature block.
pub fn forward(model: &ModelParams, features: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = model.input_dim();
    if features.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: features.len() % d,
        });
    }
    let mut trace = Trace::new(model);
    Ok(features
        .chunks_exact(d)
        .map(|row| trace.run(&model.weights, row).to_vec())
        .collect())
}

/// Mean cross-entropy on `samples` of `data`, plus `(mu / 2)·‖w − anchor‖²`, and its gradient.
fn loss_and_gradient_on(
    model: &ModelParams,
    data: &DataView,
    samples: &[usize],
    prox: Option<(f64, &ModelParams)>,
    trace: &mut Trace,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let weights = &model.weights;
    let layers = trace.layers.clone();
    let mut loss = 0.0;
    let mut delta: Vec<f64> = Vec::new();
    let mut delta_prev: Vec<f64> = Vec::new();
    for &k in samples {
        let (x, y) = data.sample(k);
        let probs = trace.run(weights, x);
        loss -= probs[y].max(f64::MIN_POSITIVE).ln();
        delta.clear();
        delta.extend_from_slice(probs);
        delta[y] -= 1.0;
        for (l, layer) in layers.iter().enumerate().rev() {
            let input = &trace.acts[l];
            for j in 0..layer.fan_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                grad[layer.bias_at + j] += dj;
                let row = &mut grad[layer.weight_at + j * layer.fan_in..layer.weight_at + (j + 1) * layer.fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += dj * a;
                }
            }
            if l == 0 {
                break;
            }
            delta_prev.clear();
            delta_prev.resize(layer.fan_in, 0.0);
            for j in 0..layer.fan_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &weights[layer.weight_at + j * layer.fan_in..layer.weight_at + (j + 1) * layer.fan_in];
                for (dp, w) in delta_prev.iter_mut().zip(row) {
                    *dp += dj * w;
                }
            }
            // ReLU derivative, read off the stored post-activation
            for (dp, a) in delta_prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *dp = 0.0;
                }
            }
            std::mem::swap(&mut delta, &mut delta_prev);
        }
    }
    let scale = 1.0 / samples.len() as f64;
    loss *= scale;
    grad.iter_mut().for_each(|g| *g *= scale);
    if let Some((mu, anchor)) = prox {
        if mu > 0.0 {
            let mut sq = 0.0;
            for ((g, w), a) in grad.iter_mut().zip(weights).zip(&anchor.weights) {
                let diff = w - a;
                *g += mu * diff;
                sq += diff * diff;
            }
            loss += 0.5 * mu * sq;
        }
    }
    loss
}

/// Full-dataset objective and gradient. Exposed for gradient checking.
pub fn loss_and_gradient(
    model: &ModelParams,
    data: &DataView,
    prox: Option<(f64, &ModelParams)>,
) -> Result<(f64, Vec<f64>)> {
    check_input(model, data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some((_, anchor)) = prox {
        model.same_shape(anchor)?;
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut trace = Trace::new(model);
    let mut grad = vec![0.0; model.weights.len()];
    let loss = loss_and_gradient_on(model, data, &all, prox, &mut trace, &mut grad);
    Ok((loss, grad))
}

/// Mean cross-entropy of `model` on `data`.
pub fn mean_loss(model: &ModelParams, data: &DataView) -> Result<f64> {
    check_input(model, data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trace = Trace::new(model);
    let mut total = 0.0;
    for k in 0..data.len() {
        let (x, y) = data.sample(k);
        total -= trace.run(&model.weights, x)[y].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / data.len() as f64)
}

/// `epochs` passes of minibatch SGD starting from `model`. Each epoch visits the
/// samples in a fresh seeded shuffle; the trailing short batch is used as-is.
pub fn local_update(
    model: &ModelParams,
    data: &DataView,
    config: &TrainConfig,
    anchor: Option<&ModelParams>,
) -> Result<ModelParams> {
    config.validate()?;
    check_input(model, data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(anchor) = anchor {
        model.same_shape(anchor)?;
    }
    let prox = match (config.prox_mu > 0.0, anchor) {
        (false, _) => None,
        (true, Some(anchor)) => Some((config.prox_mu, anchor)),
        (true, None) => return Err(Error::MissingAnchor(config.prox_mu)),
    };

    let mut current = model.clone();
    let mut trace = Trace::new(model);
    let mut grad = vec![0.0; model.weights.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            loss_and_gradient_on(&current, data, batch, prox, &mut trace, &mut grad);
            for (w, g) in current.weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
        }
        if current.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("local update"));
        }
    }
    Ok(current)
}

/// Row `c`, column `j` counts samples of true class `c` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != c) {
            return Err(Error::LengthMismatch {
                left: c,
                right: bad.len(),
            });
        }
        Ok(Self {
            num_classes: c,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.num_classes..(truth + 1) * self.num_classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        correct as f64 / self.total().max(1) as f64
    }
}

/// Argmax predictions tallied into a confusion matrix. Ties go to the lowest class index.
pub fn evaluate(model: &ModelParams, data: &DataView) -> Result<ConfusionMatrix> {
    check_input(model, data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = model.num_classes();
    let mut counts = vec![0u64; c * c];
    let mut trace = Trace::new(model);
    for k in 0..data.len() {
        let (x, y) = data.sample(k);
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, num_classes: c });
        }
        let probs = trace.run(&model.weights, x);
        let mut best = 0;
        for (j, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[best] {
                best = j;
            }
        }
        counts[y * c + best] += 1;
    }
    Ok(ConfusionMatrix { num_classes: c, counts })
}

/// Cosine of the angle between two flat weight vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
