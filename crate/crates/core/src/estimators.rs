//! One-step and two-step ratio estimation.
//!
//! The one-step method fits a single softmax network over all `(type, mark)`
//! classes. The two-step method fits a type network over `x` and one mark
//! network per type over the mark covariates, and multiplies their softmax
//! outputs. In every network the reference class (class 0) has the fixed
//! logit 0; only the remaining log-ratios are learned.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use log::warn;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::net::{
    adam_step, from_binary, log_softmax_rows, softmax_rows, to_binary, with_pinned_class, AdamConfig,
    AdamState, LabeledBatch, NetConfig, RatioNetwork, DEFAULT_LEAKY_SLOPE,
};
use crate::rng::{indexed_stream, Role};
use crate::sample::{FeatureLayout, MarkedPointSample};
use crate::sim::GroundTruthModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub patience: usize,
    /// Factor applied to the learning rate after `lr_patience` consecutive
    /// epochs without validation improvement; 1 keeps it constant.
    pub lr_decay: f64,
    pub lr_patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            max_epochs: 100,
            val_fraction: 0.1,
            patience: 8,
            lr_decay: 0.3,
            lr_patience: 2,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(invalid(format!("validation fraction {} outside [0, 0.5]", self.val_fraction)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_patience == 0 {
            return Err(invalid("learning-rate decay must lie in (0, 1] with patience >= 1"));
        }
        Ok(())
    }
}

/// Depth and width shared by every network of an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NetShape {
    pub n_layers: usize,
    pub width: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self { n_layers: 8, width: 64 }
    }
}

impl NetShape {
    pub fn config(&self, in_dim: usize, out_dim: usize) -> NetConfig {
        NetConfig {
            in_dim,
            out_dim,
            n_layers: self.n_layers,
            width: self.width,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            activate_last_hidden: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OneStep,
    TwoStep,
}

impl Method {
    /// Numeric id used in result tables.
    pub fn id(self) -> u8 {
        match self {
            Method::OneStep => 1,
            Method::TwoStep => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::OneStep => "one-step",
            Method::TwoStep => "two-step",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-step" | "1" => Ok(Method::OneStep),
            "two-step" | "2" => Ok(Method::TwoStep),
            other => Err(invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Which joint-feature columns feed the type and mark networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSplit {
    pub x_dim: usize,
    pub joint_dim: usize,
    pub layout: FeatureLayout,
}

impl FeatureSplit {
    pub fn of(sample: &MarkedPointSample) -> Self {
        Self { x_dim: sample.x_dim, joint_dim: sample.joint_dim(), layout: sample.layout }
    }

    pub fn type_columns(&self) -> Range<usize> {
        0..self.x_dim
    }

    pub fn mark_columns(&self) -> Range<usize> {
        match self.layout {
            FeatureLayout::Split => self.x_dim..self.joint_dim,
            FeatureLayout::Shared => 0..self.x_dim,
        }
    }
}

/// Log-ratio model over all classes jointly.
pub trait OneStepPredictor {
    /// Logits of classes `1..n_classes`, one row per feature row.
    fn logits(&self, features: ArrayView2<f64>) -> Array2<f64>;
}

/// Factorized model: type log-ratios over `x`, mark log-ratios per type.
pub trait TwoStepPredictor {
    fn split(&self) -> FeatureSplit;
    fn n_types(&self) -> usize;
    fn n_marks(&self) -> usize;
    /// Logits of types `1..n_types` from type features.
    fn type_logits(&self, x: ArrayView2<f64>) -> Array2<f64>;
    /// Logits of marks `1..n_marks` for type `i` from mark features.
    fn mark_logits(&self, i: usize, y: ArrayView2<f64>) -> Array2<f64>;
}

/// Anything that maps joint feature rows to class probabilities.
pub trait JointPredictor {
    fn joint_probs(&self, features: ArrayView2<f64>) -> Array2<f64>;
}

/// Log-probabilities of every class under a pinned-reference model.
pub fn onestep_log_probs<P: OneStepPredictor + ?Sized>(model: &P, features: ArrayView2<f64>) -> Array2<f64> {
    log_softmax_rows(with_pinned_class(model.logits(features), true).view())
}

pub fn onestep_joint_probs<P: OneStepPredictor + ?Sized>(model: &P, features: ArrayView2<f64>) -> Array2<f64> {
    softmax_rows(with_pinned_class(model.logits(features), true).view())
}

/// `p(i, k) = softmax_type(x)[i] * softmax_mark_i(y)[k]` per row.
pub fn twostep_joint_probs<P: TwoStepPredictor + ?Sized>(model: &P, features: ArrayView2<f64>) -> Array2<f64> {
    let split = model.split();
    let n_marks = model.n_marks();
    let x = features.slice(ndarray::s![.., split.type_columns()]);
    let y = features.slice(ndarray::s![.., split.mark_columns()]);
    let types = softmax_rows(with_pinned_class(model.type_logits(x), true).view());
    let mut out = Array2::zeros((features.nrows(), model.n_types() * n_marks));
    for i in 0..model.n_types() {
        let marks = softmax_rows(with_pinned_class(model.mark_logits(i, y), true).view());
        for r in 0..features.nrows() {
            for k in 0..n_marks {
                out[[r, n_marks * i + k]] = types[[r, i]] * marks[[r, k]];
            }
        }
    }
    out
}

/// Single-point one-step prediction; `x` and `y` are concatenated per the
/// model's layout by the caller.
pub fn predict_onestep<P: OneStepPredictor + ?Sized>(model: &P, features: &[f64]) -> Vec<f64> {
    let view = ArrayView2::from_shape((1, features.len()), features).expect("row view");
    onestep_joint_probs(model, view).row(0).to_vec()
}

pub fn predict_twostep<P: TwoStepPredictor + ?Sized>(model: &P, features: &[f64]) -> Vec<f64> {
    let view = ArrayView2::from_shape((1, features.len()), features).expect("row view");
    twostep_joint_probs(model, view).row(0).to_vec()
}

/// Closed-form log-ratios of a [`GroundTruthModel`], usable wherever a
/// fitted model is expected.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a>(pub &'a GroundTruthModel);

impl OneStepPredictor for Truth<'_> {
    fn logits(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((features.nrows(), crate::sim::N_CLASSES - 1));
        for (r, row) in features.rows().into_iter().enumerate() {
            let row = row.to_vec();
            let logits = self.0.joint_logits(&row[..2], &row[2..]);
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&logits));
        }
        out
    }
}

impl TwoStepPredictor for Truth<'_> {
    fn split(&self) -> FeatureSplit {
        FeatureSplit { x_dim: crate::sim::X_DIM, joint_dim: 3, layout: FeatureLayout::Split }
    }

    fn n_types(&self) -> usize {
        crate::sim::N_TYPES
    }

    fn n_marks(&self) -> usize {
        crate::sim::N_MARKS
    }

    fn type_logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), crate::sim::N_TYPES - 1));
        for (r, row) in x.rows().into_iter().enumerate() {
            let logits = self.0.type_logits(&row.to_vec());
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&logits));
        }
        out
    }

    fn mark_logits(&self, i: usize, y: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((y.nrows(), 1), |(r, _)| self.0.mark_logit(i, &y.row(r).to_vec()))
    }
}

impl JointPredictor for Truth<'_> {
    fn joint_probs(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((features.nrows(), crate::sim::N_CLASSES));
        for (r, row) in features.rows().into_iter().enumerate() {
            let row = row.to_vec();
            let p = self.0.joint_probability(&row[..2], &row[2..]);
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&p));
        }
        out
    }
}

/// Training and validation loss per event after each epoch; epoch 0 is the
/// initialized network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNet {
    pub net: RatioNetwork,
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
}

fn mean_loss(net: &RatioNetwork, batch: &LabeledBatch) -> Result<f64> {
    if batch.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(net.loss(batch, true)? / batch.len() as f64)
}

/// Minibatch Adam on the pinned-reference softmax loss with early stopping
/// on a held-out fraction of the rows. The learning rate shrinks when the
/// validation loss stalls. Returns the best-validation network.
///
/// `index` selects independent random streams for networks trained under
/// the same seed.
pub fn train_network(batch: &LabeledBatch, config: NetConfig, train: &TrainConfig, index: u32) -> Result<TrainedNet> {
    train.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut net = RatioNetwork::init_indexed(config, train.seed, index)?;

    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.shuffle(&mut indexed_stream(train.seed, Role::Split, index));
    let n_val = ((batch.len() as f64) * train.val_fraction).floor() as usize;
    let n_val = if n_val == batch.len() { 0 } else { n_val };
    let (val_rows, train_rows) = order.split_at(n_val);
    let val = batch.select(val_rows);
    let mut train_rows = train_rows.to_vec();
    let train_set = batch.select(&train_rows);

    let initial_train = mean_loss(&net, &train_set)?;
    let initial_val = mean_loss(&net, &val)?;
    let mut curve = vec![EpochStats { epoch: 0, train_loss: initial_train, val_loss: initial_val }];
    let monitor = |s: &EpochStats| if val.is_empty() { s.train_loss } else { s.val_loss };

    let mut best = (monitor(&curve[0]), 0usize, net.clone());
    let mut stale = 0;
    let mut plateau = 0;
    let mut adam = AdamState::new(&net, train.adam);
    let mut shuffle_rng = indexed_stream(train.seed, Role::Shuffle, index);

    for epoch in 1..=train.max_epochs {
        train_rows.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in train_rows.chunks(train.batch_size) {
            let mini = batch.select(chunk);
            let (loss, grads) = net.loss_and_grad(&mini, true)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("minibatch loss {loss} after {} Adam steps", adam.step),
                });
            }
            total += loss;
            adam_step(&mut net, &grads, &mut adam)?;
        }
        if !net.is_finite() {
            return Err(Error::Diverged { epoch, detail: "non-finite parameters".into() });
        }
        let stats = EpochStats {
            epoch,
            train_loss: total / train_rows.len() as f64,
            val_loss: mean_loss(&net, &val)?,
        };
        curve.push(stats);
        let score = monitor(&stats);
        if !score.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("monitored loss {score}") });
        }
        if score < best.0 {
            best = (score, epoch, net.clone());
            stale = 0;
            plateau = 0;
        } else {
            stale += 1;
            if stale >= train.patience {
                break;
            }
            plateau += 1;
            if plateau >= train.lr_patience {
                adam.config.lr *= train.lr_decay;
                plateau = 0;
            }
        }
    }
    let (_, best_epoch, net) = best;
    Ok(TrainedNet { net, curve, best_epoch })
}

fn features_matrix(rows: impl Iterator<Item = Vec<f64>>, n: usize, dim: usize) -> Array2<f64> {
    let mut flat = Vec::with_capacity(n * dim);
    for row in rows {
        flat.extend(row);
    }
    Array2::from_shape_vec((n, dim), flat).expect("rows of equal length")
}

/// One row per event: joint features, label `n_marks * type + mark`.
pub fn build_onestep_batch(sample: &MarkedPointSample) -> Result<LabeledBatch> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let features = features_matrix(
        sample.events.iter().map(|ev| sample.joint_features(ev)),
        sample.len(),
        sample.joint_dim(),
    );
    let labels = sample.events.iter().map(|ev| sample.class_of(ev)).collect();
    LabeledBatch::new(features, labels)
}

/// Type batch over `x` with labels `i`, and per-type mark batches over the
/// mark features with labels `k`, in time order.
pub fn build_twostep_batches(sample: &MarkedPointSample) -> Result<(LabeledBatch, Vec<LabeledBatch>)> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let type_batch = LabeledBatch::new(
        features_matrix(sample.events.iter().map(|ev| ev.x.clone()), sample.len(), sample.x_dim),
        sample.events.iter().map(|ev| ev.type_i).collect(),
    )?;
    let mark_dim = sample.mark_dim();
    let mark_batches = (0..sample.n_types)
        .map(|i| {
            let events: Vec<_> = sample.events.iter().filter(|ev| ev.type_i == i).collect();
            LabeledBatch::new(
                features_matrix(
                    events.iter().map(|ev| sample.mark_features(ev).to_vec()),
                    events.len(),
                    mark_dim,
                ),
                events.iter().map(|ev| ev.mark_k).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((type_batch, mark_batches))
}

/// Network configuration of the one-step estimator for `sample`.
pub fn onestep_config(sample: &MarkedPointSample, shape: NetShape) -> NetConfig {
    shape.config(sample.joint_dim(), sample.n_classes() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStepConfigs {
    pub type_net: NetConfig,
    pub mark_net: NetConfig,
}

pub fn twostep_configs(sample: &MarkedPointSample, shape: NetShape) -> TwoStepConfigs {
    TwoStepConfigs {
        type_net: shape.config(sample.x_dim, sample.n_types - 1),
        mark_net: shape.config(sample.mark_dim(), sample.n_marks - 1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepModel {
    pub net: RatioNetwork,
    pub curve: Vec<EpochStats>,
}

impl OneStepPredictor for OneStepModel {
    fn logits(&self, features: ArrayView2<f64>) -> Array2<f64> {
        self.net.forward_batch(features).expect("feature width checked at training")
    }
}

impl JointPredictor for OneStepModel {
    fn joint_probs(&self, features: ArrayView2<f64>) -> Array2<f64> {
        onestep_joint_probs(self, features)
    }
}

pub fn train_onestep(sample: &MarkedPointSample, config: NetConfig, train: &TrainConfig) -> Result<OneStepModel> {
    if config.in_dim != sample.joint_dim() || config.out_dim != sample.n_classes() - 1 {
        return Err(invalid(format!(
            "one-step network must map {} features to {} logits",
            sample.joint_dim(),
            sample.n_classes() - 1
        )));
    }
    let batch = build_onestep_batch(sample)?;
    let trained = train_network(&batch, config, train, 0)?;
    Ok(OneStepModel { net: trained.net, curve: trained.curve })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepModel {
    pub split: FeatureSplit,
    pub type_net: RatioNetwork,
    pub mark_nets: Vec<RatioNetwork>,
    pub type_curve: Vec<EpochStats>,
    pub mark_curves: Vec<Vec<EpochStats>>,
    /// Types without any event; their mark network is the zero network.
    pub empty_types: Vec<usize>,
}

impl TwoStepPredictor for TwoStepModel {
    fn split(&self) -> FeatureSplit {
        self.split
    }

    fn n_types(&self) -> usize {
        self.mark_nets.len()
    }

    fn n_marks(&self) -> usize {
        self.mark_nets[0].config.out_dim + 1
    }

    fn type_logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.type_net.forward_batch(x).expect("feature width checked at training")
    }

    fn mark_logits(&self, i: usize, y: ArrayView2<f64>) -> Array2<f64> {
        self.mark_nets[i].forward_batch(y).expect("feature width checked at training")
    }
}

impl JointPredictor for TwoStepModel {
    fn joint_probs(&self, features: ArrayView2<f64>) -> Array2<f64> {
        twostep_joint_probs(self, features)
    }
}

/// Trains the type network and the per-type mark networks independently;
/// the mark networks train in parallel.
pub fn train_twostep(sample: &MarkedPointSample, configs: TwoStepConfigs, train: &TrainConfig) -> Result<TwoStepModel> {
    if configs.type_net.in_dim != sample.x_dim
        || configs.type_net.out_dim != sample.n_types - 1
        || configs.mark_net.in_dim != sample.mark_dim()
        || configs.mark_net.out_dim != sample.n_marks - 1
    {
        return Err(invalid("two-step network shapes do not match the sample dimensions"));
    }
    let (type_batch, mark_batches) = build_twostep_batches(sample)?;
    let (type_result, mark_results) = rayon::join(
        || train_network(&type_batch, configs.type_net, train, 0),
        || {
            mark_batches
                .par_iter()
                .enumerate()
                .map(|(i, batch)| {
                    if batch.is_empty() {
                        warn!("no events of type {i}; its mark network stays at uniform probabilities");
                        return Ok(None);
                    }
                    train_network(batch, configs.mark_net, train, 1 + i as u32).map(Some)
                })
                .collect::<Result<Vec<_>>>()
        },
    );
    let type_trained = type_result?;
    let mut mark_nets = Vec::new();
    let mut mark_curves = Vec::new();
    let mut empty_types = Vec::new();
    for (i, trained) in mark_results?.into_iter().enumerate() {
        match trained {
            Some(t) => {
                mark_nets.push(t.net);
                mark_curves.push(t.curve);
            }
            None => {
                mark_nets.push(RatioNetwork::zeros(configs.mark_net)?);
                mark_curves.push(Vec::new());
                empty_types.push(i);
            }
        }
    }
    Ok(TwoStepModel {
        split: FeatureSplit::of(sample),
        type_net: type_trained.net,
        mark_nets,
        type_curve: type_trained.curve,
        mark_curves,
        empty_types,
    })
}

/// A fitted estimator of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    OneStep(OneStepModel),
    TwoStep(TwoStepModel),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::OneStep(_) => Method::OneStep,
            FittedModel::TwoStep(_) => Method::TwoStep,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            FittedModel::OneStep(m) => m.net.num_parameters(),
            FittedModel::TwoStep(m) => {
                m.type_net.num_parameters() + m.mark_nets.iter().map(|n| n.num_parameters()).sum::<usize>()
            }
        }
    }

    /// Writes checkpoints, training curves and `manifest.json` into `dir`.
    pub fn write_bundle(&self, dir: &Path, manifest_extra: BundleInfo) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut nets = Vec::new();
        let mut save = |name: String, net: &RatioNetwork, curve: &[EpochStats]| -> Result<()> {
            fs::write(dir.join(format!("{name}.bin")), to_binary(net))?;
            write_curve(&dir.join(format!("curve_{name}.csv")), curve)?;
            nets.push(name);
            Ok(())
        };
        let split = match self {
            FittedModel::OneStep(m) => {
                save("joint".into(), &m.net, &m.curve)?;
                None
            }
            FittedModel::TwoStep(m) => {
                save("type".into(), &m.type_net, &m.type_curve)?;
                for (i, (net, curve)) in m.mark_nets.iter().zip(&m.mark_curves).enumerate() {
                    save(format!("mark_{i}"), net, curve)?;
                }
                Some(m.split)
            }
        };
        let manifest = BundleManifest {
            method: self.method(),
            networks: nets,
            split,
            parameter_count: self.parameter_count(),
            info: manifest_extra,
        };
        serde_json::to_writer_pretty(File::create(dir.join("manifest.json"))?, &manifest)?;
        Ok(())
    }

    pub fn read_bundle(dir: &Path) -> Result<(Self, BundleInfo)> {
        let manifest: BundleManifest = serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
        let load = |name: &str| -> Result<RatioNetwork> { from_binary(&fs::read(dir.join(format!("{name}.bin")))?) };
        let model = match manifest.method {
            Method::OneStep => FittedModel::OneStep(OneStepModel { net: load("joint")?, curve: Vec::new() }),
            Method::TwoStep => {
                let split = manifest.split.ok_or_else(|| Error::Parse("two-step manifest lacks feature split".into()))?;
                let mark_nets = manifest
                    .networks
                    .iter()
                    .filter(|n| n.starts_with("mark_"))
                    .map(|n| load(n))
                    .collect::<Result<Vec<_>>>()?;
                let n = mark_nets.len();
                FittedModel::TwoStep(TwoStepModel {
                    split,
                    type_net: load("type")?,
                    mark_nets,
                    type_curve: Vec::new(),
                    mark_curves: vec![Vec::new(); n],
                    empty_types: Vec::new(),
                })
            }
        };
        Ok((model, manifest.info))
    }
}

impl JointPredictor for FittedModel {
    fn joint_probs(&self, features: ArrayView2<f64>) -> Array2<f64> {
        match self {
            FittedModel::OneStep(m) => m.joint_probs(features),
            FittedModel::TwoStep(m) => m.joint_probs(features),
        }
    }
}

/// Provenance recorded in a bundle manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub shape: NetShape,
    pub train: TrainConfig,
    pub sample_seed: u64,
    pub horizon: f64,
    pub model_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleManifest {
    method: Method,
    networks: Vec<String>,
    split: Option<FeatureSplit>,
    parameter_count: usize,
    info: BundleInfo,
}

pub fn write_curve(path: &Path, curve: &[EpochStats]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "epoch,train_loss,val_loss")?;
    for s in curve {
        writeln!(out, "{},{},{}", s.epoch, s.train_loss, s.val_loss)?;
    }
    out.flush()?;
    Ok(())
}

/// Fits `method` on `sample` with every network shaped `shape`.
pub fn fit(sample: &MarkedPointSample, method: Method, shape: NetShape, train: &TrainConfig) -> Result<FittedModel> {
    Ok(match method {
        Method::OneStep => FittedModel::OneStep(train_onestep(sample, onestep_config(sample, shape), train)?),
        Method::TwoStep => FittedModel::TwoStep(train_twostep(sample, twostep_configs(sample, shape), train)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::EventRecord;
    use crate::sim::{simulate, GroundTruthModel};

    fn tiny_sample(pairs: &[(usize, usize)]) -> MarkedPointSample {
        let events = pairs
            .iter()
            .enumerate()
            .map(|(n, &(i, k))| EventRecord {
                time: 1.0 + n as f64,
                type_i: i,
                mark_k: k,
                x: vec![0.1 * n as f64, -0.2],
                y: vec![0.05 * n as f64],
            })
            .collect();
        MarkedPointSample {
            model_id: "test".into(),
            horizon: pairs.len() as f64 + 1.0,
            seed: 0,
            n_types: 4,
            n_marks: 2,
            x_dim: 2,
            y_dim: 1,
            layout: FeatureLayout::Split,
            events,
            covariate_grid: None,
        }
    }

    #[test]
    fn onestep_batch_rows() {
        let s = tiny_sample(&[(0, 0)]);
        let b = build_onestep_batch(&s).unwrap();
        assert_eq!(b.labels, vec![0]);
        assert_eq!(b.features.row(0).to_vec(), vec![0.0, -0.2, 0.0]);

        let pairs = [(3, 1), (0, 1), (3, 1), (2, 0), (1, 1)];
        let b = build_onestep_batch(&tiny_sample(&pairs)).unwrap();
        let mut labels = b.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![1, 3, 4, 7, 7]);
    }

    #[test]
    fn empty_sample_is_rejected() {
        let s = tiny_sample(&[]);
        assert!(matches!(build_onestep_batch(&s), Err(Error::EmptySample)));
        assert!(matches!(build_twostep_batches(&s), Err(Error::EmptySample)));
    }

    #[test]
    fn twostep_batches_partition_events() {
        let pairs: Vec<_> = (0..4).flat_map(|i| [(i, 0), (i, 1)]).collect();
        let (types, marks) = build_twostep_batches(&tiny_sample(&pairs)).unwrap();
        assert_eq!(types.len(), 8);
        assert!(marks.iter().all(|m| m.len() == 2));
        assert_eq!(marks.iter().map(LabeledBatch::len).sum::<usize>(), types.len());

        let pairs = [(2, 1), (0, 0), (2, 0), (2, 1), (1, 0)];
        let (_, marks) = build_twostep_batches(&tiny_sample(&pairs)).unwrap();
        assert_eq!(marks[2].labels, vec![1, 0, 1]);
        assert!(marks[3].is_empty());
    }

    #[test]
    fn zero_models_predict_uniform() {
        let one = OneStepModel { net: RatioNetwork::zeros(NetConfig::new(3, 7, 1, 4)).unwrap(), curve: vec![] };
        let p = predict_onestep(&one, &[0.3, 0.1, -0.2]);
        assert!(p.iter().all(|v| (v - 0.125).abs() < 1e-15));

        let two = TwoStepModel {
            split: FeatureSplit { x_dim: 2, joint_dim: 3, layout: FeatureLayout::Split },
            type_net: RatioNetwork::zeros(NetConfig::new(2, 3, 1, 4)).unwrap(),
            mark_nets: vec![RatioNetwork::zeros(NetConfig::new(1, 1, 1, 4)).unwrap(); 4],
            type_curve: vec![],
            mark_curves: vec![vec![]; 4],
            empty_types: vec![],
        };
        let p = predict_twostep(&two, &[0.3, 0.1, -0.2]);
        assert!(p.iter().all(|v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn truth_plugged_twostep_reproduces_joint_probability() {
        let model = GroundTruthModel::benchmark();
        let truth = Truth(&model);
        for point in [[0.0, 0.0, 0.0], [0.7, -1.2, 0.4], [-2.0, 0.5, -0.9]] {
            let p2 = predict_twostep(&truth, &point);
            let p1 = predict_onestep(&truth, &point);
            let exact = model.joint_probability(&point[..2], &point[2..]);
            for c in 0..8 {
                assert!((p2[c] - exact[c]).abs() < 1e-10);
                assert!((p1[c] - exact[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pinned_class_breaks_shift_invariance() {
        // Shifting only the learned logits changes the prediction; shifting
        // the full vector (including the pinned zero) would not.
        let mut net = RatioNetwork::zeros(NetConfig::new(1, 3, 1, 2)).unwrap();
        let base = predict_onestep(&OneStepModel { net: net.clone(), curve: vec![] }, &[0.0]);
        net.layers[2].bias.fill(0.7);
        let shifted = predict_onestep(&OneStepModel { net, curve: vec![] }, &[0.0]);
        assert!((shifted[0] - base[0]).abs() > 1e-3);
        let full = softmax_rows(ndarray::array![[0.7, 0.7, 0.7, 0.7]].view());
        assert!(full.iter().zip(&base).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let s = simulate(&GroundTruthModel::benchmark(), 60.0, 3).unwrap();
        let train = TrainConfig { max_epochs: 5, batch_size: 64, seed: 11, ..Default::default() };
        let shape = NetShape { n_layers: 2, width: 8 };
        let a = train_onestep(&s, onestep_config(&s, shape), &train).unwrap();
        let b = train_onestep(&s, onestep_config(&s, shape), &train).unwrap();
        assert_eq!(a, b);
        let first = a.curve.first().unwrap().train_loss;
        let last = a.curve.last().unwrap().train_loss;
        assert!(last <= first);

        let c = train_twostep(&s, twostep_configs(&s, shape), &train).unwrap();
        let d = train_twostep(&s, twostep_configs(&s, shape), &train).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn empty_type_gets_uniform_mark_net() {
        let pairs = [(0, 0), (0, 1), (1, 1), (2, 0), (1, 0), (2, 1)];
        let s = tiny_sample(&pairs);
        let train = TrainConfig { max_epochs: 2, val_fraction: 0.0, ..Default::default() };
        let m = train_twostep(&s, twostep_configs(&s, NetShape { n_layers: 1, width: 3 }), &train).unwrap();
        assert_eq!(m.empty_types, vec![3]);
        let p = softmax_rows(with_pinned_class(m.mark_logits(3, ndarray::array![[0.4]].view()), true).view());
        assert!((p[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let s = tiny_sample(&[(0, 0), (1, 1)]);
        let train = TrainConfig::default();
        assert!(train_onestep(&s, NetConfig::new(2, 7, 1, 2), &train).is_err());
        let mut cfg = twostep_configs(&s, NetShape::default());
        cfg.mark_net.in_dim = 2;
        assert!(train_twostep(&s, cfg, &train).is_err());
        assert!(TrainConfig { val_fraction: 0.7, ..train }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..train }.validate().is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let s = simulate(&GroundTruthModel::benchmark(), 30.0, 1).unwrap();
        let train = TrainConfig { max_epochs: 1, ..Default::default() };
        let shape = NetShape { n_layers: 1, width: 4 };
        let info = BundleInfo { shape, train, sample_seed: 1, horizon: 30.0, model_id: s.model_id.clone() };
        let dir = tempfile::tempdir().unwrap();
        for method in [Method::OneStep, Method::TwoStep] {
            let fitted = fit(&s, method, shape, &train).unwrap();
            let sub = dir.path().join(method.name());
            fitted.write_bundle(&sub, info.clone()).unwrap();
            let (back, back_info) = FittedModel::read_bundle(&sub).unwrap();
            assert_eq!(back_info, info);
            let feats = build_onestep_batch(&s).unwrap().features;
            assert_eq!(back.joint_probs(feats.view()), fitted.joint_probs(feats.view()));
            assert!(sub.join("manifest.json").exists());
        }
        let curve = std::fs::read_to_string(dir.path().join("one-step/curve_joint.csv")).unwrap();
        assert!(curve.starts_with("epoch,train_loss,val_loss\n0,"));
    }
}
