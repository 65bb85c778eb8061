//! Closed-form Gaussian CVaR: the risk coefficient, the CVaR itself, and the
//! per-step and union-bound violation probabilities it certifies.

use crate::error::{Error, Result};
use crate::normal;

/// CVaR tail level, restricted to the open interval (0, 1/2).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta < 0.5 {
            Ok(Self(beta))
        } else {
            Err(Error::RiskDomain(beta))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `kappa = phi(Phi^-1(beta)) / beta`, the number of standard deviations the
/// CVaR sits below the mean.
pub fn kappa(beta: RiskLevel) -> f64 {
    normal::pdf(normal::quantile(beta.0)) / beta.0
}

/// CVaR of `N(mu, sigma^2)` at level `beta`: `mu - kappa * sigma`.
pub fn cvar_gaussian(mu: f64, sigma: f64, beta: RiskLevel) -> Result<f64> {
    if sigma < 0.0 {
        return Err(Error::VarianceDomain(sigma));
    }
    Ok(mu - kappa(beta) * sigma)
}

/// Upper bound `Phi(-kappa)` on `P(X < 0)` for any Gaussian with `mu >= kappa sigma`.
pub fn tail_bound(kappa_val: f64) -> f64 {
    normal::cdf(-kappa_val)
}

/// Union bound over a horizon; `raw` may exceed one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonBound {
    pub per_step: f64,
    pub raw: f64,
    pub clamped: f64,
}

pub fn horizon_bound(beta: RiskLevel, n_steps: usize) -> HorizonBound {
    let per_step = tail_bound(kappa(beta));
    let raw = n_steps as f64 * per_step;
    HorizonBound {
        per_step,
        raw,
        clamped: raw.min(1.0),
    }
}
