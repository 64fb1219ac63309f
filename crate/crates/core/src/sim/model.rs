use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ou::OuParams;
use crate::error::{Error, Result};

pub const N_TYPES: usize = 4;
pub const N_MARKS: usize = 2;
pub const N_CLASSES: usize = N_TYPES * N_MARKS;
pub const X_DIM: usize = 2;
pub const Y_DIM: usize = 1;

/// Deterministic time-of-day factor multiplying every intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    /// `1 + cos(2 pi t)`.
    Periodic,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TypeIntensities {
    /// The four closed-form covariate intensities.
    Benchmark,
    /// Every type has the same constant intensity.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MarkLaw {
    Benchmark,
    /// Both marks equally likely for every type.
    Uniform,
}

/// Closed-form marked intensity model
/// `lambda^{i,k}(t) = lambda_0(t) lambda^i(X_t) p_i^k(Y_t)` with OU covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub baseline: Baseline,
    pub intensities: TypeIntensities,
    pub marks: MarkLaw,
    pub ou_x: [OuParams; X_DIM],
    pub ou_y: [OuParams; Y_DIM],
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn baseline_intensity(t: f64) -> f64 {
    1.0 + (2.0 * PI * t).cos()
}

/// Type intensity `lambda^i(x)` of the reference model.
pub fn true_intensity(i: usize, x: &[f64]) -> Result<f64> {
    if i >= N_TYPES {
        return Err(Error::InvalidType(i));
    }
    if x.len() != X_DIM {
        return Err(Error::Shape(format!("x has {} components, expected {X_DIM}", x.len())));
    }
    Ok(benchmark_intensity(i, x[0], x[1]))
}

fn benchmark_intensity(i: usize, x0: f64, x1: f64) -> f64 {
    match i {
        0 => 2.0 + x0.tanh() * (-x1 * x1).exp(),
        1 => 2.0 + (PI * x0).cos() * x1.tanh(),
        2 => 2.0 + (2.0 * PI * x0).sin() * logistic(x1),
        _ => 3.0 - (-x0 * x0).exp(),
    }
}

/// Conditional mark probability `p_i^k(y)` of the reference model.
pub fn mark_probability(i: usize, k: usize, y: &[f64]) -> Result<f64> {
    if i >= N_TYPES {
        return Err(Error::InvalidType(i));
    }
    if k >= N_MARKS {
        return Err(Error::InvalidMark(k));
    }
    if y.len() != Y_DIM {
        return Err(Error::Shape(format!("y has {} components, expected {Y_DIM}", y.len())));
    }
    let p0 = benchmark_mark_zero(i, y[0]);
    Ok(if k == 0 { p0 } else { 1.0 - p0 })
}

fn benchmark_mark_zero(i: usize, y: f64) -> f64 {
    match i {
        0 => 0.25,
        1 => 0.05 + 0.9 * (PI * y).cos().abs(),
        2 => logistic(y),
        _ => 0.6 * (-y * y).exp(),
    }
}

/// Joint event probabilities `p^{i,k}(x, y)` of the reference model.
pub fn true_joint_probability(model: &GroundTruthModel, x: &[f64], y: &[f64]) -> [f64; N_CLASSES] {
    model.joint_probability(x, y)
}

impl GroundTruthModel {
    /// The simulation-study model with its OU covariates.
    pub fn benchmark() -> Self {
        Self {
            baseline: Baseline::Periodic,
            intensities: TypeIntensities::Benchmark,
            marks: MarkLaw::Benchmark,
            ou_x: [
                OuParams { theta: 0.1, xbar: 0.0, sigma: 0.1 },
                OuParams { theta: 0.2, xbar: 0.0, sigma: 0.2 },
            ],
            ou_y: [OuParams { theta: 0.1, xbar: 0.0, sigma: 0.1 }],
        }
    }

    /// Homogeneous model: unit baseline, every type at `rate`, uniform marks.
    pub fn constant(rate: f64) -> Self {
        Self {
            baseline: Baseline::Constant(1.0),
            intensities: TypeIntensities::Constant(rate),
            marks: MarkLaw::Uniform,
            ..Self::benchmark()
        }
    }

    /// Periodic baseline with equal type intensities and uniform marks, so
    /// every class has probability 1/8 whatever the covariates.
    pub fn symmetric() -> Self {
        Self {
            intensities: TypeIntensities::Constant(2.0),
            marks: MarkLaw::Uniform,
            ..Self::benchmark()
        }
    }

    pub fn id(&self) -> String {
        let base = match self.baseline {
            Baseline::Periodic => "periodic".to_string(),
            Baseline::Constant(c) => format!("const{c}"),
        };
        let types = match self.intensities {
            TypeIntensities::Benchmark => "benchmark".to_string(),
            TypeIntensities::Constant(c) => format!("const{c}"),
        };
        let marks = match self.marks {
            MarkLaw::Benchmark => "benchmark",
            MarkLaw::Uniform => "uniform",
        };
        format!("baseline={base};types={types};marks={marks}")
    }

    pub fn baseline(&self, t: f64) -> f64 {
        match self.baseline {
            Baseline::Periodic => baseline_intensity(t),
            Baseline::Constant(c) => c,
        }
    }

    /// Integral of the baseline over `[0, t]`.
    pub fn baseline_integral(&self, t: f64) -> f64 {
        match self.baseline {
            Baseline::Periodic => t + (2.0 * PI * t).sin() / (2.0 * PI),
            Baseline::Constant(c) => c * t,
        }
    }

    pub fn intensity(&self, i: usize, x: &[f64]) -> Result<f64> {
        if i >= N_TYPES {
            return Err(Error::InvalidType(i));
        }
        Ok(self.intensities(x)[i])
    }

    /// All four type intensities at `x`.
    pub fn intensities(&self, x: &[f64]) -> [f64; N_TYPES] {
        match self.intensities {
            TypeIntensities::Benchmark => std::array::from_fn(|i| benchmark_intensity(i, x[0], x[1])),
            TypeIntensities::Constant(c) => [c; N_TYPES],
        }
    }

    pub fn mark_probs(&self, i: usize, y: &[f64]) -> [f64; N_MARKS] {
        let p0 = match self.marks {
            MarkLaw::Benchmark => benchmark_mark_zero(i, y[0]),
            MarkLaw::Uniform => 0.5,
        };
        [p0, 1.0 - p0]
    }

    pub fn mark_probability(&self, i: usize, k: usize, y: &[f64]) -> Result<f64> {
        if i >= N_TYPES {
            return Err(Error::InvalidType(i));
        }
        if k >= N_MARKS {
            return Err(Error::InvalidMark(k));
        }
        Ok(self.mark_probs(i, y)[k])
    }

    pub fn joint_probability(&self, x: &[f64], y: &[f64]) -> [f64; N_CLASSES] {
        let lambdas = self.intensities(x);
        let mut p = [0.0; N_CLASSES];
        for (i, lambda) in lambdas.iter().enumerate() {
            let marks = self.mark_probs(i, y);
            for (k, pk) in marks.iter().enumerate() {
                p[N_MARKS * i + k] = lambda * pk;
            }
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    /// Log-ratios `log(lambda^i p_i^k / lambda^0 p_0^0)` for the seven
    /// classes other than `(0, 0)`.
    pub fn joint_logits(&self, x: &[f64], y: &[f64]) -> [f64; N_CLASSES - 1] {
        let lambdas = self.intensities(x);
        let mut logs = [0.0; N_CLASSES];
        for (i, lambda) in lambdas.iter().enumerate() {
            let marks = self.mark_probs(i, y);
            for (k, pk) in marks.iter().enumerate() {
                logs[N_MARKS * i + k] = lambda.ln() + pk.ln();
            }
        }
        std::array::from_fn(|c| logs[c + 1] - logs[0])
    }

    /// `log(lambda^i / lambda^0)` for `i = 1..4`.
    pub fn type_logits(&self, x: &[f64]) -> [f64; N_TYPES - 1] {
        let lambdas = self.intensities(x);
        std::array::from_fn(|i| lambdas[i + 1].ln() - lambdas[0].ln())
    }

    /// `log(p_i^1 / p_i^0)`.
    pub fn mark_logit(&self, i: usize, y: &[f64]) -> f64 {
        let [p0, p1] = self.mark_probs(i, y);
        p1.ln() - p0.ln()
    }

    /// Constant `M` with `lambda_0(t) * sum_i lambda^i(x) <= M` everywhere.
    pub fn dominating_bound(&self) -> f64 {
        let baseline_sup = match self.baseline {
            Baseline::Periodic => 2.0,
            Baseline::Constant(c) => c,
        };
        // Each reference intensity is 2 plus a term bounded by 1 in absolute
        // value, or 3 - exp(-x^2) <= 3.
        let intensity_sup = match self.intensities {
            TypeIntensities::Benchmark => 3.0 * N_TYPES as f64,
            TypeIntensities::Constant(c) => c * N_TYPES as f64,
        };
        baseline_sup * intensity_sup
    }
}

pub fn dominating_bound(model: &GroundTruthModel) -> f64 {
    model.dominating_bound()
}
