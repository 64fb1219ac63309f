//! Error measures of fitted probability models: held-out empirical risk,
//! uniform L2 and L-infinity errors on a quantile grid, and binned empirical
//! class frequencies.

use log::warn;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{
    build_onestep_batch, build_twostep_batches, onestep_log_probs, JointPredictor, Method, NetShape,
    OneStepPredictor, TwoStepPredictor,
};
use crate::net::{log_softmax_rows, with_pinned_class, LabeledBatch};
use crate::sample::MarkedPointSample;

/// Grid resolution: `G + 1` points per axis.
pub const DEFAULT_GRID_INTERVALS: usize = 20;

/// Offset between a training seed and the seed of its evaluation sample.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

fn realized_log_prob_gap(hat: &Array2<f64>, truth: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let lp = hat[[r, label]];
        if lp == f64::NEG_INFINITY {
            return Err(invalid("model assigns zero probability to an observed event"));
        }
        total += lp - truth[[r, label]];
    }
    Ok(total)
}

fn pinned_log_probs(logits: Array2<f64>) -> Array2<f64> {
    log_softmax_rows(with_pinned_class(logits, true).view())
}

/// `-(1/T) sum_events [log p_hat(class) - log p(class)]` over a fresh
/// sample, for the joint model.
pub fn empirical_risk_onestep<M, T>(model: &M, truth: &T, fresh: &MarkedPointSample) -> Result<f64>
where
    M: OneStepPredictor + ?Sized,
    T: OneStepPredictor + ?Sized,
{
    let batch = build_onestep_batch(fresh)?;
    let hat = onestep_log_probs(model, batch.features.view());
    let exact = onestep_log_probs(truth, batch.features.view());
    Ok(-realized_log_prob_gap(&hat, &exact, &batch.labels)? / fresh.horizon)
}

/// Two-step risk split into the type term and one mark term per type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepRisk {
    pub type_term: f64,
    pub mark_terms: Vec<f64>,
}

impl TwoStepRisk {
    pub fn total(&self) -> f64 {
        self.type_term + self.mark_terms.iter().sum::<f64>()
    }
}

pub fn empirical_risk_twostep<M, T>(model: &M, truth: &T, fresh: &MarkedPointSample) -> Result<TwoStepRisk>
where
    M: TwoStepPredictor + ?Sized,
    T: TwoStepPredictor + ?Sized,
{
    let (types, marks) = build_twostep_batches(fresh)?;
    let gap = |batch: &LabeledBatch, hat: Array2<f64>, exact: Array2<f64>| -> Result<f64> {
        Ok(-realized_log_prob_gap(&pinned_log_probs(hat), &pinned_log_probs(exact), &batch.labels)? / fresh.horizon)
    };
    let x = types.features.view();
    let type_term = gap(&types, model.type_logits(x), truth.type_logits(x))?;
    let mark_terms = marks
        .iter()
        .enumerate()
        .map(|(i, batch)| {
            if batch.is_empty() {
                return Ok(0.0);
            }
            let y = batch.features.view();
            gap(batch, model.mark_logits(i, y), truth.mark_logits(i, y))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TwoStepRisk { type_term, mark_terms })
}

/// Type-7 (linear interpolation of order statistics) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(draws: &[f64], prob: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, prob)
}

/// Regular per-axis grids between the 1% and 99% empirical quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Vec<f64>>,
}

impl GridSpec {
    pub fn cardinality(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// All grid points, last axis varying fastest.
    pub fn points(&self) -> Array2<f64> {
        let dim = self.axes.len();
        let n = self.cardinality();
        let mut out = Array2::zeros((n, dim));
        for r in 0..n {
            let mut rest = r;
            for j in (0..dim).rev() {
                let len = self.axes[j].len();
                out[[r, j]] = self.axes[j][rest % len];
                rest /= len;
            }
        }
        out
    }
}

pub fn quantile_grid(draws: &[Vec<f64>], intervals: usize) -> Result<GridSpec> {
    if intervals == 0 {
        return Err(invalid("grid needs at least one interval"));
    }
    let axes = draws
        .iter()
        .enumerate()
        .map(|(j, axis)| {
            if axis.len() < 100 {
                return Err(invalid(format!("axis {j} has {} draws, need at least 100", axis.len())));
            }
            let mut sorted = axis.clone();
            sorted.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&sorted, 0.01);
            let hi = quantile_sorted(&sorted, 0.99);
            if lo == hi {
                warn!("axis {j} is degenerate at {lo}; grid repeats a single point");
            }
            Ok((0..=intervals).map(|g| lo + g as f64 * (hi - lo) / intervals as f64).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridSpec { axes })
}

/// `(eps_l2, eps_linf)` between predicted and true class probabilities, one
/// row per grid point.
pub fn grid_errors(predicted: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<(f64, f64)> {
    if predicted.dim() != truth.dim() {
        return Err(Error::Shape(format!("{:?} predictions vs {:?} truth", predicted.dim(), truth.dim())));
    }
    let n = predicted.nrows() as f64;
    let mut l2 = 0.0;
    let mut linf: f64 = 0.0;
    for c in 0..predicted.ncols() {
        let mut sq = 0.0;
        for (p, t) in predicted.column(c).iter().zip(truth.column(c)) {
            let d = (p - t).abs();
            sq += d * d;
            linf = linf.max(d);
        }
        l2 += (sq / n).sqrt();
    }
    Ok((l2, linf))
}

/// Evaluates both predictors on every grid point and compares them.
pub fn grid_errors_on<P, T>(model: &P, truth: &T, grid: &GridSpec) -> Result<(f64, f64)>
where
    P: JointPredictor + ?Sized,
    T: JointPredictor + ?Sized,
{
    let points = grid.points();
    grid_errors(model.joint_probs(points.view()).view(), truth.joint_probs(points.view()).view())
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub method: Method,
    pub horizon: f64,
    pub seed: u64,
    pub shape: NetShape,
    pub eps_l2: f64,
    pub eps_linf: f64,
    pub risk: f64,
    pub wall_s: f64,
}

impl ErrorReport {
    pub const CSV_HEADER: &'static str = "method,T,seed,nL,nN,eps_l2,eps_linf,risk,wall_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.method.id(),
            self.horizon,
            self.seed,
            self.shape.n_layers,
            self.shape.width,
            self.eps_l2,
            self.eps_linf,
            self.risk,
            self.wall_s
        )
    }
}

/// Relative class frequencies of events binned along one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedProbs {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `None` for bins without events.
    pub freqs: Vec<Option<Vec<f64>>>,
}

impl BinnedProbs {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Bins events on joint-feature column `axis` over `range` (the data range
/// when `None`), keeping only events whose columns match every
/// `(column, value)` in `conditioning`.
pub fn empirical_binned_probs(
    sample: &MarkedPointSample,
    axis: usize,
    n_bins: usize,
    range: Option<(f64, f64)>,
    conditioning: &[(usize, f64)],
) -> Result<BinnedProbs> {
    if n_bins == 0 {
        return Err(invalid("need at least one bin"));
    }
    if axis >= sample.joint_dim() || conditioning.iter().any(|&(c, _)| c >= sample.joint_dim()) {
        return Err(invalid("binning column out of range"));
    }
    let rows: Vec<(Vec<f64>, usize)> = sample
        .events
        .iter()
        .map(|ev| (sample.joint_features(ev), sample.class_of(ev)))
        .filter(|(f, _)| conditioning.iter().all(|&(c, v)| (f[c] - v).abs() <= 1e-9))
        .collect();
    let (lo, hi) = match range {
        Some(r) => r,
        None if rows.is_empty() => (0.0, 1.0),
        None => rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (f, _)| {
            (lo.min(f[axis]), hi.max(f[axis]))
        }),
    };
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=n_bins).map(|b| lo + b as f64 * width).collect();
    let n_classes = sample.n_classes();
    let mut tallies = vec![vec![0usize; n_classes]; n_bins];
    for (f, class) in &rows {
        let v = f[axis];
        if v < lo || v > hi {
            continue;
        }
        let bin = (((v - lo) / width) as usize).min(n_bins - 1);
        tallies[bin][*class] += 1;
    }
    let counts: Vec<usize> = tallies.iter().map(|t| t.iter().sum()).collect();
    let freqs = tallies
        .iter()
        .zip(&counts)
        .map(|(t, &n)| (n > 0).then(|| t.iter().map(|&c| c as f64 / n as f64).collect()))
        .collect();
    Ok(BinnedProbs { edges, counts, freqs })
}
