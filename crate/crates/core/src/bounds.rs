//! Closed-form quantities from the convergence theory of deep ratio
//! estimators: effective smoothness, the rate `phi_T`, the covering-number
//! bound of sparse ReLU classes, the tail-integral bound and the
//! compatibility constants of `-log x + x - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Composition of Hölder functions: exponents `betas[i]` acting on `ts[i]`
/// effective inputs, `i = 0..=q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub betas: Vec<f64>,
    pub ts: Vec<u32>,
}

impl SmoothnessSpec {
    pub fn new(betas: Vec<f64>, ts: Vec<u32>) -> Result<Self> {
        if betas.is_empty() || betas.len() != ts.len() {
            return Err(invalid("betas and ts must be nonempty and of equal length"));
        }
        if betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(invalid("Hölder exponents must be positive"));
        }
        if ts.iter().any(|&t| t < 1) {
            return Err(invalid("effective dimensions must be >= 1"));
        }
        Ok(Self { betas, ts })
    }

    /// Composition depth `q`.
    pub fn depth(&self) -> usize {
        self.betas.len() - 1
    }
}

/// Network size entering the covering bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSizeSpec {
    /// Number of hidden layers `L`.
    pub depth: usize,
    /// Widths `p_0..p_{L+1}`.
    pub widths: Vec<usize>,
    /// Number of nonzero parameters.
    pub sparsity: usize,
    /// Covering radius.
    pub delta: f64,
}

/// `beta*_i = beta_i * prod_{j > i} min(beta_j, 1)`.
pub fn effective_smoothness(betas: &[f64]) -> Result<Vec<f64>> {
    if betas.is_empty() {
        return Err(invalid("need at least one exponent"));
    }
    if betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(invalid("Hölder exponents must be positive"));
    }
    let mut out = vec![0.0; betas.len()];
    let mut tail = 1.0;
    for i in (0..betas.len()).rev() {
        out[i] = betas[i] * tail;
        tail *= betas[i].min(1.0);
    }
    Ok(out)
}

/// `phi_T = max_i T^{-2 beta*_i / (2 beta*_i + t_i)}`.
pub fn rate_phi(horizon: f64, spec: &SmoothnessSpec) -> Result<f64> {
    if !(horizon > 1.0) {
        return Err(invalid(format!("rate needs T > 1, got {horizon}")));
    }
    let star = effective_smoothness(&spec.betas)?;
    Ok(star
        .iter()
        .zip(&spec.ts)
        .map(|(b, &t)| horizon.powf(-2.0 * b / (2.0 * b + t as f64)))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `(s + 1) ln[2 delta^{-1} (L + 1) prod_l (p_l + 1)]`.
pub fn covering_bound(size: &NetSizeSpec) -> Result<f64> {
    if !(size.delta > 0.0) {
        return Err(invalid("covering radius must be positive"));
    }
    if size.widths.len() != size.depth + 2 {
        return Err(invalid(format!(
            "depth {} needs {} widths, got {}",
            size.depth,
            size.depth + 2,
            size.widths.len()
        )));
    }
    // Sum of logs avoids overflowing the width product.
    let log_widths: f64 = size.widths.iter().map(|&p| ((p + 1) as f64).ln()).sum();
    let inner = (2.0 / size.delta).ln() + ((size.depth + 1) as f64).ln() + log_widths;
    Ok((size.sparsity as f64 + 1.0) * inner)
}

/// `sup_{u >= 1} u^{k-1} e^{-u/2}`, attained at `u = max(1, 2(k - 1))`.
pub fn tail_sup_constant(k: f64) -> f64 {
    let u = (2.0 * (k - 1.0)).max(1.0);
    u.powf(k - 1.0) * (-u / 2.0).exp()
}

/// Upper bound `c_k p^{-1} C^{-(1+q)/p} exp(-C B^p / 2)` on
/// `I(p, q, C, B) = int_B^inf y^q exp(-C y^p) dy`, with
/// `c_k = 2 sup_{u >= 1} u^{k-1} e^{-u/2}`.
///
/// Requires `(q + 1) / p <= k` and `C B^p >= 1`.
pub fn tail_integral_bound(p: f64, q: f64, c: f64, b: f64, k: f64) -> Result<f64> {
    if !(p > 0.0 && q > 0.0 && c > 0.0 && b > 0.0) {
        return Err(invalid("p, q, C and B must be positive"));
    }
    if (q + 1.0) / p > k {
        return Err(invalid(format!("(q + 1) / p = {} exceeds k = {k}", (q + 1.0) / p)));
    }
    let cbp = c * b.powf(p);
    if cbp < 1.0 {
        return Err(invalid(format!("C B^p = {cbp} < 1")));
    }
    let c_k = 2.0 * tail_sup_constant(k);
    Ok(c_k / p * c.powf(-(1.0 + q) / p) * (-cbp / 2.0).exp())
}

/// `(-ln x + x - 1) / (x - 1)^2`, continuous at `x = 1` with value 1/2.
pub fn compatibility_ratio(x: f64) -> f64 {
    let h = x - 1.0;
    if h.abs() < 1e-3 {
        // Series of (h - ln(1 + h)) / h^2.
        let mut sum = 0.0;
        let mut power = 1.0;
        for n in 2..12 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * power / n as f64;
            power *= h;
        }
        sum
    } else {
        (h - h.ln_1p()) / (h * h)
    }
}

/// Best constants `(c0, c1)` with `c0 (x-1)^2 <= -ln x + x - 1 <= c1 (x-1)^2`
/// on `[x0, x1]`: infimum and supremum of [`compatibility_ratio`], located by
/// a dense scan refined with golden-section search.
pub fn compatibility_constants(x0: f64, x1: f64) -> Result<(f64, f64)> {
    if !(x0 > 0.0 && x0 < x1 && x1.is_finite()) {
        return Err(invalid(format!("need 0 < x0 < x1, got [{x0}, {x1}]")));
    }
    if !(x0 <= 1.0 && 1.0 <= x1) {
        return Err(invalid(format!("interval [{x0}, {x1}] must contain 1")));
    }
    const SCAN: usize = 4096;
    let step = (x1 - x0) / SCAN as f64;
    let at = |j: usize| if j == SCAN { x1 } else { x0 + j as f64 * step };
    let values: Vec<f64> = (0..=SCAN).map(|j| compatibility_ratio(at(j))).collect();

    let refine = |sign: f64| -> f64 {
        let best = (0..=SCAN)
            .max_by(|&a, &b| (sign * values[a]).total_cmp(&(sign * values[b])))
            .expect("nonempty scan");
        let (mut lo, mut hi) = (at(best.saturating_sub(1)), at((best + 1).min(SCAN)));
        let golden = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let a = hi - golden * (hi - lo);
            let b = lo + golden * (hi - lo);
            if sign * compatibility_ratio(a) >= sign * compatibility_ratio(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let candidates = [values[best], compatibility_ratio(0.5 * (lo + hi))];
        candidates.into_iter().fold(if sign > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY }, |acc, v| {
            if sign * v > sign * acc {
                v
            } else {
                acc
            }
        })
    };
    Ok((refine(-1.0), refine(1.0)))
}

/// Inputs of a full bounds report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsInput {
    pub smoothness: SmoothnessSpec,
    pub horizon: f64,
    pub net: NetSizeSpec,
    pub tail: TailArgs,
    pub interval: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailArgs {
    pub p: f64,
    pub q: f64,
    pub c: f64,
    pub b: f64,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub effective_smoothness: Vec<f64>,
    pub rate_phi: f64,
    pub log_covering_bound: f64,
    pub tail_integral_bound: f64,
    pub compatibility_constants: (f64, f64),
}

pub fn bounds_report(input: &BoundsInput) -> Result<BoundsReport> {
    let TailArgs { p, q, c, b, k } = input.tail;
    Ok(BoundsReport {
        effective_smoothness: effective_smoothness(&input.smoothness.betas)?,
        rate_phi: rate_phi(input.horizon, &input.smoothness)?,
        log_covering_bound: covering_bound(&input.net)?,
        tail_integral_bound: tail_integral_bound(p, q, c, b, k)?,
        compatibility_constants: compatibility_constants(input.interval.0, input.interval.1)?,
    })
}
