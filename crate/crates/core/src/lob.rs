//! Level-1 order-book market orders as a marked point process.
//!
//! Each market order is an event of type `side` (0 = bid side / sell,
//! 1 = ask side / buy) with mark `mid_changed`. Covariates are measured just
//! before the order: queue imbalance, sign of the previous trade and the
//! spread in ticks clipped to 3.
//!
//! Input files are assumed to hold one market order per row (multi-fill
//! orders already merged upstream) with prices in integer price units.

use std::path::Path;

use log::warn;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{twostep_joint_probs, FeatureSplit, JointPredictor, OneStepPredictor, TwoStepPredictor};
use crate::net::log_softmax_rows;
use crate::rng::{stream, Role};
use crate::sample::{EventRecord, FeatureLayout, MarkedPointSample};
use crate::sim::OuParams;

pub const LOB_TYPES: usize = 2;
pub const LOB_MARKS: usize = 2;
pub const LOB_DIM: usize = 3;
pub const MAX_SPREAD_TICKS: f64 = 3.0;

/// One market order with the book state just before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLobEvent {
    /// Microseconds since session start.
    pub timestamp_us: i64,
    /// 0 = bid side (sell), 1 = ask side (buy).
    pub side: u8,
    pub best_bid: i64,
    pub best_ask: i64,
    pub qty_bid: u64,
    pub qty_ask: u64,
    pub mid_changed: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LobCovariates {
    pub imbalance: f64,
    pub last_sign: f64,
    pub spread_ticks: f64,
}

impl LobCovariates {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.imbalance, self.last_sign, self.spread_ticks]
    }
}

/// Covariates of the accepted records of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionCovariates {
    /// Indices into the input stream of the records kept.
    pub accepted: Vec<usize>,
    pub covariates: Vec<LobCovariates>,
    /// Records dropped for a crossed book or an empty best queue.
    pub rejected: usize,
}

pub fn imbalance(qty_bid: u64, qty_ask: u64) -> f64 {
    (qty_bid as f64 - qty_ask as f64) / (qty_bid as f64 + qty_ask as f64)
}

/// Spread in ticks rounded to the nearest integer and clipped to `[1, 3]`.
pub fn spread_ticks(best_bid: i64, best_ask: i64, tick_size: f64) -> f64 {
    ((best_ask - best_bid) as f64 / tick_size).round().clamp(1.0, MAX_SPREAD_TICKS)
}

/// Side of the previous trade as a sign: -1 for the bid side, +1 for the ask side.
fn side_sign(side: u8) -> f64 {
    if side == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Causal covariates for one session. The last-trade sign starts at +1.
pub fn compute_covariates(events: &[RawLobEvent], tick_size: f64) -> Result<SessionCovariates> {
    if events.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(tick_size > 0.0 && tick_size.is_finite()) {
        return Err(invalid(format!("tick size must be positive, got {tick_size}")));
    }
    let mut out = SessionCovariates { accepted: Vec::new(), covariates: Vec::new(), rejected: 0 };
    let mut last_sign = 1.0;
    let mut last_time = i64::MIN;
    for (n, ev) in events.iter().enumerate() {
        if ev.timestamp_us < last_time {
            return Err(Error::Parse(format!("timestamps decrease at record {n}")));
        }
        last_time = ev.timestamp_us;
        if ev.side > 1 || ev.mid_changed > 1 {
            return Err(Error::Parse(format!("record {n}: side and mid_changed must be 0 or 1")));
        }
        if ev.best_ask <= ev.best_bid || ev.qty_bid == 0 || ev.qty_ask == 0 {
            out.rejected += 1;
            continue;
        }
        out.accepted.push(n);
        out.covariates.push(LobCovariates {
            imbalance: imbalance(ev.qty_bid, ev.qty_ask),
            last_sign,
            spread_ticks: spread_ticks(ev.best_bid, ev.best_ask, tick_size),
        });
        last_sign = side_sign(ev.side);
    }
    if out.rejected > 0 {
        warn!("rejected {} of {} order-book records", out.rejected, events.len());
    }
    Ok(out)
}

/// Events of one session as a marked sample with shared covariates
/// `(imbalance, last sign, spread)`; horizon is the last timestamp in seconds.
pub fn to_marked_sample(events: &[RawLobEvent], covariates: &SessionCovariates) -> MarkedPointSample {
    let records = covariates
        .accepted
        .iter()
        .zip(&covariates.covariates)
        .map(|(&n, cov)| {
            let ev = &events[n];
            EventRecord {
                time: ev.timestamp_us as f64 * 1e-6,
                type_i: ev.side as usize,
                mark_k: ev.mid_changed as usize,
                x: cov.to_vec(),
                y: Vec::new(),
            }
        })
        .collect();
    MarkedPointSample {
        model_id: "lob".into(),
        horizon: events.last().map_or(0.0, |e| e.timestamp_us as f64 * 1e-6),
        seed: 0,
        n_types: LOB_TYPES,
        n_marks: LOB_MARKS,
        x_dim: LOB_DIM,
        y_dim: 0,
        layout: FeatureLayout::Shared,
        events: records,
        covariate_grid: None,
    }
}

/// Concatenates sessions into one training sample, dropping each session's
/// first event (its last-trade sign is undefined) and shifting times so
/// sessions follow each other.
pub fn training_sample(sessions: &[MarkedPointSample]) -> Result<MarkedPointSample> {
    let mut out = MarkedPointSample {
        model_id: "lob".into(),
        horizon: 0.0,
        seed: 0,
        n_types: LOB_TYPES,
        n_marks: LOB_MARKS,
        x_dim: LOB_DIM,
        y_dim: 0,
        layout: FeatureLayout::Shared,
        events: Vec::new(),
        covariate_grid: None,
    };
    for session in sessions {
        let offset = out.horizon;
        out.events.extend(session.events.iter().skip(1).map(|ev| EventRecord { time: ev.time + offset, ..ev.clone() }));
        out.horizon += session.horizon;
    }
    if out.events.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(out)
}

pub fn read_lob_csv(path: &Path) -> Result<Vec<RawLobEvent>> {
    let mut reader = csv::Reader::from_path(path)?;
    let expected = ["timestamp_us", "side", "best_bid", "best_ask", "qty_bid", "qty_ask", "mid_changed"];
    let headers = reader.headers()?.clone();
    if headers.iter().map(str::trim).ne(expected) {
        return Err(Error::Parse(format!("{}: expected header {}", path.display(), expected.join(","))));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_lob_csv(path: &Path, events: &[RawLobEvent]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for ev in events {
        writer.serialize(ev)?;
    }
    writer.flush()?;
    Ok(())
}

/// Known conditional law of the synthetic stream: a logistic side choice and
/// per-side logistic price-change probabilities, driven by imbalance, last
/// trade sign and spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLobLaw {
    pub sign_weight: f64,
    pub imbalance_weight: f64,
    pub mark_intercept: f64,
    pub mark_imbalance_weight: f64,
    pub mark_spread_weight: f64,
}

impl Default for SyntheticLobLaw {
    fn default() -> Self {
        Self {
            sign_weight: 0.9,
            imbalance_weight: 1.5,
            mark_intercept: -0.5,
            mark_imbalance_weight: 2.5,
            mark_spread_weight: 0.4,
        }
    }
}

impl SyntheticLobLaw {
    /// Log-odds of an ask-side (buy) order against a bid-side one.
    pub fn side_logit(&self, x: &[f64]) -> f64 {
        self.sign_weight * x[1] + self.imbalance_weight * x[0] / x[2]
    }

    /// Log-odds of a price change for an order on `side`.
    pub fn mark_logit(&self, side: usize, x: &[f64]) -> f64 {
        let direction = if side == 0 { -1.0 } else { 1.0 };
        self.mark_intercept + direction * self.mark_imbalance_weight * x[0] / x[2]
            - self.mark_spread_weight * (x[2] - 1.0)
    }

    /// Class probabilities indexed `2 * side + mark`.
    pub fn class_probs(&self, x: &[f64]) -> [f64; 4] {
        let buy = 1.0 / (1.0 + (-self.side_logit(x)).exp());
        let mut p = [0.0; 4];
        for (side, ps) in [(0, 1.0 - buy), (1, buy)] {
            let change = 1.0 / (1.0 + (-self.mark_logit(side, x)).exp());
            p[2 * side] = ps * (1.0 - change);
            p[2 * side + 1] = ps * change;
        }
        p
    }
}

impl TwoStepPredictor for SyntheticLobLaw {
    fn split(&self) -> FeatureSplit {
        FeatureSplit { x_dim: LOB_DIM, joint_dim: LOB_DIM, layout: FeatureLayout::Shared }
    }

    fn n_types(&self) -> usize {
        LOB_TYPES
    }

    fn n_marks(&self) -> usize {
        LOB_MARKS
    }

    fn type_logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((x.nrows(), 1), |(r, _)| self.side_logit(&x.row(r).to_vec()))
    }

    fn mark_logits(&self, i: usize, y: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((y.nrows(), 1), |(r, _)| self.mark_logit(i, &y.row(r).to_vec()))
    }
}

impl OneStepPredictor for SyntheticLobLaw {
    fn logits(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let log_p = twostep_joint_probs(self, features).mapv(f64::ln);
        let mut out = Array2::zeros((features.nrows(), 3));
        for r in 0..features.nrows() {
            for c in 1..4 {
                out[[r, c - 1]] = log_p[[r, c]] - log_p[[r, 0]];
            }
        }
        out
    }
}

impl JointPredictor for SyntheticLobLaw {
    fn joint_probs(&self, features: ArrayView2<f64>) -> Array2<f64> {
        twostep_joint_probs(self, features)
    }
}

/// Row-wise log class probabilities of the law, for diagnostics.
pub fn law_log_probs(law: &SyntheticLobLaw, features: ArrayView2<f64>) -> Array2<f64> {
    let logits = OneStepPredictor::logits(law, features);
    log_softmax_rows(crate::net::with_pinned_class(logits, true).view())
}

/// Spread transition matrix of the synthetic book (rows: current spread 1..3).
const SPREAD_CHAIN: [[f64; 3]; 3] = [[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]];
const BOOK_DEPTH: f64 = 1000.0;
/// Spacing and extent of the imbalance lattice of the synthetic book.
pub const IMBALANCE_STEP: f64 = 0.4;
pub const IMBALANCE_MAX: f64 = 0.8;

/// Imbalance values the synthetic book can show: `-0.8, -0.4, 0, 0.4, 0.8`.
pub fn imbalance_levels() -> Vec<f64> {
    let n = (IMBALANCE_MAX / IMBALANCE_STEP).round() as i32;
    (-n..=n).map(|j| j as f64 * IMBALANCE_STEP).collect()
}

/// Every covariate combination of the synthetic book as rows
/// `(imbalance, sign, spread)`: the support of the known class table.
pub fn synthetic_table_points() -> Array2<f64> {
    let levels = imbalance_levels();
    let mut rows = Vec::new();
    for sign in [-1.0, 1.0] {
        for spread in [1.0, 2.0, 3.0] {
            for &imb in &levels {
                rows.extend([imb, sign, spread]);
            }
        }
    }
    Array2::from_shape_vec((rows.len() / 3, 3), rows).expect("three columns")
}

/// Synthetic session of about `horizon` market orders at unit rate per
/// second. A latent OU is clipped and rounded onto the imbalance lattice,
/// spread follows a 3-state Markov chain, and each order's side and
/// price-change flag are drawn from [`SyntheticLobLaw`] at the covariates
/// [`compute_covariates`] will see, so the law given covariates is a finite
/// table.
pub fn synthesize_lob_stream(horizon: f64, seed: u64) -> Result<Vec<RawLobEvent>> {
    synthesize_with_law(&SyntheticLobLaw::default(), horizon, seed)
}

pub fn synthesize_with_law(law: &SyntheticLobLaw, horizon: f64, seed: u64) -> Result<Vec<RawLobEvent>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let mut rng = stream(seed, Role::Lob);
    let gaps = Exp::new(1.0).expect("unit rate");
    let ou = OuParams::new(0.5, 0.0, 0.6)?;
    let z0: f64 = StandardNormal.sample(&mut rng);
    let mut latent = ou.stationary_sd() * z0;
    let mut spread: usize = 1;
    let mut bid: i64 = 10_000;
    let mut last_sign = 1.0;
    let mut t = 0.0;
    let mut last_us = 0i64;
    let mut events = Vec::new();
    loop {
        let dt = gaps.sample(&mut rng);
        t += dt;
        if t > horizon {
            break;
        }
        latent = ou.transition(latent, dt, StandardNormal.sample(&mut rng))?;
        let z = ((latent / IMBALANCE_STEP).round() * IMBALANCE_STEP).clamp(-IMBALANCE_MAX, IMBALANCE_MAX);
        let qty_bid = (BOOK_DEPTH * (1.0 + z) / 2.0).round() as u64;
        let qty_ask = BOOK_DEPTH as u64 - qty_bid;

        let x = [imbalance(qty_bid, qty_ask), last_sign, spread as f64];
        let p = law.class_probs(&x);
        let mut u: f64 = rng.random();
        let mut class = 3;
        for (c, pc) in p.iter().enumerate() {
            if u < *pc {
                class = c;
                break;
            }
            u -= pc;
        }
        let (side, mid_changed) = ((class / 2) as u8, (class % 2) as u8);
        let timestamp_us = ((t * 1e6).round() as i64).max(last_us + 1);
        last_us = timestamp_us;
        events.push(RawLobEvent {
            timestamp_us,
            side,
            best_bid: bid,
            best_ask: bid + spread as i64,
            qty_bid,
            qty_ask,
            mid_changed,
        });

        last_sign = side_sign(side);
        if mid_changed == 1 {
            bid += if side == 0 { -1 } else { 1 };
        }
        let row = SPREAD_CHAIN[spread - 1];
        let mut v: f64 = rng.random();
        spread = 3;
        for (s, ps) in row.iter().enumerate() {
            if v < *ps {
                spread = s + 1;
                break;
            }
            v -= ps;
        }
    }
    Ok(events)
}
