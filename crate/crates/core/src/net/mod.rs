//! Dense LeakyReLU networks that output log-ratios against a pinned
//! reference class, with exact reverse-mode gradients of the softmax
//! log-likelihood.

mod adam;
mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{indexed_stream, Role};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{from_binary, from_json, to_binary, to_json};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Number of inner (hidden-to-hidden) layers.
    pub n_layers: usize,
    /// Neurons per layer.
    pub width: usize,
    pub leaky_slope: f64,
    /// Also activate the last hidden layer (conventional MLP). Off by
    /// default: the last hidden layer is linear.
    #[serde(default)]
    pub activate_last_hidden: bool,
}

impl NetConfig {
    pub fn new(in_dim: usize, out_dim: usize, n_layers: usize, width: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            n_layers,
            width,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            activate_last_hidden: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.n_layers == 0 || self.width == 0 {
            return Err(invalid(format!("all network dimensions must be >= 1: {self:?}")));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(invalid(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.in_dim, self.width)];
        shapes.extend(std::iter::repeat_n((self.width, self.width), self.n_layers));
        shapes.push((self.width, self.out_dim));
        shapes
    }

    fn activated(&self, layer: usize) -> bool {
        layer < self.n_layers || (self.activate_last_hidden && layer == self.n_layers)
    }
}

/// Number of trainable scalars of a network with this configuration.
pub fn param_count(config: &NetConfig) -> usize {
    let (i, o, l, w) = (config.in_dim, config.out_dim, config.n_layers, config.width);
    (i * w + w) + l * (w * w + w) + (w * o + o)
}

/// One affine map `z = W a + b`; `weights` is `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weights: Array2::zeros((fan_out, fan_in)), bias: Array1::zeros(fan_out) }
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Per-parameter gradient, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

/// Feature rows and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self { features: Array2::zeros((0, dim)), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioNetwork {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
}

struct Trace {
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
}

impl RatioNetwork {
    /// He initialization: weights `N(0, 2 / fan_in)`, biases zero.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        Self::init_indexed(config, seed, 0)
    }

    /// Like [`RatioNetwork::init`] on an independent stream per `index`.
    pub fn init_indexed(config: NetConfig, seed: u64, index: u32) -> Result<Self> {
        config.validate()?;
        let mut rng = indexed_stream(seed, Role::Init, index);
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| normal.sample(&mut rng));
                Layer { weights, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// All parameters zero: every logit is 0, so predictions are uniform.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_shapes().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
        Ok(Self { config, layers })
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    /// Parameters in layer order; each layer's weights row-major, then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                self.num_parameters()
            )));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Logits for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.config.in_dim {
            return Err(Error::Shape(format!(
                "input has {} components, network expects {}",
                input.len(),
                self.config.in_dim
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let batch = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(batch)?.row(0).to_vec())
    }

    /// Logits for each row of `inputs`.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs)?;
        let mut a = inputs.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            if self.config.activated(l) {
                let slope = self.config.leaky_slope;
                z.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
            }
            a = z;
        }
        Ok(a)
    }

    fn check_input(&self, inputs: ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.config.in_dim {
            return Err(Error::Shape(format!(
                "inputs have {} columns, network expects {}",
                inputs.ncols(),
                self.config.in_dim
            )));
        }
        Ok(())
    }

    fn forward_traced(&self, inputs: ArrayView2<f64>) -> (Array2<f64>, Trace) {
        let mut trace = Trace { inputs: Vec::new(), pre: Vec::new() };
        let mut a = inputs.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            let next = if self.config.activated(l) {
                let slope = self.config.leaky_slope;
                z.mapv(|v| if v > 0.0 { v } else { slope * v })
            } else {
                z.clone()
            };
            trace.inputs.push(a);
            trace.pre.push(z);
            a = next;
        }
        (a, trace)
    }

    fn backward(&self, trace: Trace, mut delta: Array2<f64>) -> Gradient {
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &trace.inputs[l];
            let weights = delta.t().dot(input);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.layers[l].weights);
                if self.config.activated(l - 1) {
                    let slope = self.config.leaky_slope;
                    ndarray::Zip::from(&mut upstream)
                        .and(&trace.pre[l - 1])
                        .for_each(|d, &z| {
                            if z <= 0.0 {
                                *d *= slope
                            }
                        });
                }
                delta = upstream;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        Gradient { layers: grads }
    }

    /// Summed negative log-likelihood `-sum log softmax(logits)[label]` and
    /// its gradient.
    ///
    /// With `fixed_zero_class` the softmax runs over `out_dim + 1` classes
    /// whose class 0 has the constant logit 0; labels index that full set.
    pub fn loss_and_grad(&self, batch: &LabeledBatch, fixed_zero_class: bool) -> Result<(f64, Gradient)> {
        self.check_input(batch.features.view())?;
        let classes = self.config.out_dim + usize::from(fixed_zero_class);
        if let Some(&label) = batch.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let (logits, trace) = self.forward_traced(batch.features.view());
        let full = with_pinned_class(logits, fixed_zero_class);
        let log_probs = log_softmax_rows(full.view());

        let mut loss = 0.0;
        let mut delta = log_probs.mapv(f64::exp);
        for (r, &label) in batch.labels.iter().enumerate() {
            loss -= log_probs[[r, label]];
            delta[[r, label]] -= 1.0;
        }
        let delta = if fixed_zero_class {
            delta.slice(s![.., 1..]).to_owned()
        } else {
            delta
        };
        Ok((loss, self.backward(trace, delta)))
    }

    /// Summed negative log-likelihood only.
    pub fn loss(&self, batch: &LabeledBatch, fixed_zero_class: bool) -> Result<f64> {
        self.check_input(batch.features.view())?;
        let classes = self.config.out_dim + usize::from(fixed_zero_class);
        if let Some(&label) = batch.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let logits = self.forward_batch(batch.features.view())?;
        let log_probs = log_softmax_rows(with_pinned_class(logits, fixed_zero_class).view());
        Ok(-batch.labels.iter().enumerate().map(|(r, &l)| log_probs[[r, l]]).sum::<f64>())
    }

    /// Perturbs every parameter by `N(0, sd^2)`; used to build deliberately
    /// degraded models.
    pub fn perturbed<R: Rng>(&self, sd: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, sd).expect("finite sd");
        let mut out = self.clone();
        for layer in &mut out.layers {
            layer.weights.iter_mut().for_each(|w| *w += normal.sample(rng));
            layer.bias.iter_mut().for_each(|b| *b += normal.sample(rng));
        }
        out
    }
}

/// Prepends a zero column when the reference class is pinned.
pub fn with_pinned_class(logits: Array2<f64>, pinned: bool) -> Array2<f64> {
    if !pinned {
        return logits;
    }
    let mut full = Array2::zeros((logits.nrows(), logits.ncols() + 1));
    full.slice_mut(s![.., 1..]).assign(&logits);
    full
}

/// Row-wise numerically stable log-softmax.
pub fn log_softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Layer::len).sum());
    for layer in layers {
        out.extend(layer.weights.iter());
        out.extend(layer.bias.iter());
    }
    out
}
