use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::model::{GroundTruthModel, N_MARKS, N_TYPES, X_DIM, Y_DIM};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Role};
use crate::sample::{CovariateGrid, EventRecord, FeatureLayout, MarkedPointSample};

/// Spacing of the recorded covariate snapshot.
pub const GRID_STEP: f64 = 0.1;

const DIM: usize = X_DIM + Y_DIM;

struct Covariates<'a> {
    params: [&'a super::OuParams; DIM],
    state: [f64; DIM],
    time: f64,
}

impl Covariates<'_> {
    fn advance(&mut self, to: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let dt = to - self.time;
        for (value, params) in self.state.iter_mut().zip(self.params) {
            let gauss: f64 = StandardNormal.sample(rng);
            *value = params.transition(*value, dt, gauss)?;
        }
        self.time = to;
        Ok(())
    }
}

/// Simulates the marked process on `(0, horizon]` by Lewis-Shedler thinning
/// of a homogeneous Poisson stream at the model's dominating rate.
///
/// Covariates start from their stationary law and move by exact OU
/// transitions between successive candidate and snapshot times.
pub fn simulate(model: &GroundTruthModel, horizon: f64, seed: u64) -> Result<MarkedPointSample> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let bound = model.dominating_bound();
    let mut rng = stream(seed, Role::Simulation);
    let candidate_gap = Exp::new(bound).map_err(|e| invalid(e.to_string()))?;

    let params = [&model.ou_x[0], &model.ou_x[1], &model.ou_y[0]];
    let mut state = [0.0; DIM];
    for (value, p) in state.iter_mut().zip(params) {
        let gauss: f64 = StandardNormal.sample(&mut rng);
        *value = p.xbar + p.stationary_sd() * gauss;
    }
    let mut cov = Covariates { params, state, time: 0.0 };

    let n_grid = (horizon / GRID_STEP).floor() as usize + 1;
    let mut grid = Vec::with_capacity(n_grid * DIM);
    let mut next_grid = 0usize;
    let mut events = Vec::new();
    let mut t = 0.0;

    loop {
        let candidate = t + candidate_gap.sample(&mut rng);
        let stop = candidate.min(horizon);
        while next_grid < n_grid && next_grid as f64 * GRID_STEP <= stop {
            cov.advance(next_grid as f64 * GRID_STEP, &mut rng)?;
            grid.extend_from_slice(&cov.state);
            next_grid += 1;
        }
        if candidate > horizon {
            break;
        }
        cov.advance(candidate, &mut rng)?;
        t = candidate;

        let x = &cov.state[..X_DIM];
        let y = &cov.state[X_DIM..];
        let lambdas = model.intensities(x);
        let total: f64 = lambdas.iter().sum();
        let ratio = model.baseline(t) * total / bound;
        if ratio > 1.0 {
            return Err(Error::BoundViolated { time: t, ratio });
        }
        let u: f64 = rng.random();
        if u >= ratio {
            continue;
        }

        let mut pick = rng.random::<f64>() * total;
        let mut type_i = N_TYPES - 1;
        for (i, lambda) in lambdas.iter().enumerate() {
            if pick < *lambda {
                type_i = i;
                break;
            }
            pick -= lambda;
        }
        let p0 = model.mark_probs(type_i, y)[0];
        let mark_k = if rng.random::<f64>() < p0 { 0 } else { 1 };
        events.push(EventRecord { time: t, type_i, mark_k, x: x.to_vec(), y: y.to_vec() });
    }

    let rows = grid.len() / DIM;
    let values = Array2::from_shape_vec((rows, DIM), grid).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(MarkedPointSample {
        model_id: model.id(),
        horizon,
        seed,
        n_types: N_TYPES,
        n_marks: N_MARKS,
        x_dim: X_DIM,
        y_dim: Y_DIM,
        layout: FeatureLayout::Split,
        events,
        covariate_grid: Some(CovariateGrid { step: GRID_STEP, values }),
    })
}
