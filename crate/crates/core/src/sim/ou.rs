use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Parameters of `dX = theta (xbar - X) dt + sigma dB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub theta: f64,
    pub xbar: f64,
    pub sigma: f64,
}

impl OuParams {
    pub fn new(theta: f64, xbar: f64, sigma: f64) -> Result<Self> {
        if !(theta.is_finite() && xbar.is_finite() && sigma.is_finite()) {
            return Err(Error::NonFinite("OU parameters"));
        }
        if theta <= 0.0 || sigma < 0.0 {
            return Err(invalid(format!("OU requires theta > 0 and sigma >= 0, got theta={theta}, sigma={sigma}")));
        }
        Ok(Self { theta, xbar, sigma })
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta)
    }

    pub fn stationary_sd(&self) -> f64 {
        self.stationary_variance().sqrt()
    }

    /// Conditional standard deviation after `dt`.
    pub fn transition_sd(&self, dt: f64) -> f64 {
        let factor = if self.theta > 0.0 {
            -(-2.0 * self.theta * dt).exp_m1() / (2.0 * self.theta)
        } else {
            dt
        };
        self.sigma * factor.sqrt()
    }

    pub fn transition(&self, state: f64, dt: f64, gauss: f64) -> Result<f64> {
        ou_transition(state, dt, self, gauss)
    }
}

/// Exact Gaussian transition of the OU process over `dt`.
pub fn ou_transition(state: f64, dt: f64, params: &OuParams, gauss: f64) -> Result<f64> {
    if !(state.is_finite() && dt.is_finite() && gauss.is_finite()) {
        return Err(Error::NonFinite("ou_transition input"));
    }
    if dt < 0.0 {
        return Err(invalid(format!("negative time step {dt}")));
    }
    let decay = (-params.theta * dt).exp();
    Ok(params.xbar + (state - params.xbar) * decay + params.transition_sd(dt) * gauss)
}
