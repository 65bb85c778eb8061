//! Monte Carlo check of the per-step violation bound on a scalar system.
//!
//! Each trial draws a random scalar instance `h_dot + alpha(h) = a u + b + sigma z`,
//! solves the risk-constrained filter for a nominal input that would violate
//! the constraint, so the solution sits on `a u + b = (kappa + slack) sigma`,
//! then samples one noise realization.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::controller::scp::{scp_solve, CvarProgram, ScpConfig};
use crate::cvar::{kappa, tail_bound, RiskLevel};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub beta_risk: f64,
    pub kappa: f64,
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
    pub standard_error: f64,
    /// 95% normal-approximation interval.
    pub ci_low: f64,
    pub ci_high: f64,
    /// `Phi(-(kappa + slack_sigmas))` for the tested offset.
    pub bound: f64,
    /// Largest distance of a solved mean from its intended value, in sigma units.
    pub max_placement_error: f64,
}

impl ValidationReport {
    /// `|rate - bound| <= k SE`, with SE taken at the bound.
    pub fn within(&self, k: f64) -> bool {
        let se = (self.bound * (1.0 - self.bound) / self.trials as f64).sqrt();
        (self.rate - self.bound).abs() <= k * se
    }
}

/// `slack_sigmas` shifts the solved constraint by that many standard deviations
/// into the safe side (zero means equality).
pub fn mc_safety_validation(
    beta_risk: f64,
    n_trials: usize,
    slack_sigmas: f64,
    seed: u64,
) -> Result<ValidationReport> {
    let k = kappa(RiskLevel::new(beta_risk)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ScpConfig::default();
    let mut violations = 0;
    let mut max_err: f64 = 0.0;
    for _ in 0..n_trials {
        let a: f64 = rng.random_range(1.0..2.0);
        let sigma: f64 = rng.random_range(0.05..0.5);
        let b: f64 = rng.random_range(-0.5..0.0);
        // constraint a u + b - (k + slack) sigma >= 0, nominal far on the unsafe side
        let prog = CvarProgram {
            weights: DVector::from_element(1, 1.0),
            target: DVector::from_element(1, -1.0),
            lower: DVector::from_element(1, -4.0),
            upper: DVector::from_element(1, 4.0),
            span_inf: 8.0,
            a: DVector::from_element(1, a),
            b,
            kappa: k + slack_sigmas,
            p: DMatrix::zeros(1, 1),
            q: DVector::zeros(1),
            cov: DMatrix::zeros(1, 1),
            extra: sigma * sigma,
            rho: 1e9,
        };
        let start = DVector::from_element(1, 2.0);
        let out = scp_solve(&prog, &start, &cfg)?;
        let mean = a * out.v[0] + b;
        max_err = max_err.max((mean / sigma - (k + slack_sigmas)).abs());
        let z: f64 = StandardNormal.sample(&mut rng);
        if mean + sigma * z < 0.0 {
            violations += 1;
        }
    }
    let n = n_trials as f64;
    let rate = violations as f64 / n;
    let se = (rate * (1.0 - rate) / n).sqrt();
    Ok(ValidationReport {
        beta_risk,
        kappa: k,
        trials: n_trials,
        violations,
        rate,
        standard_error: se,
        ci_low: (rate - 1.96 * se).max(0.0),
        ci_high: rate + 1.96 * se,
        bound: tail_bound(k + slack_sigmas),
        max_placement_error: max_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equality_rate_matches_tail() {
        let r = mc_safety_validation(0.05, 20_000, 0.0, 1).unwrap();
        assert!(r.max_placement_error < 1e-6, "{}", r.max_placement_error);
        assert!(r.within(3.0), "{r:?}");
    }

    #[test]
    fn slack_lowers_rate_below_tail() {
        let r = mc_safety_validation(0.05, 20_000, 1.0, 2).unwrap();
        assert!(r.rate < tail_bound(r.kappa));
    }

    #[test]
    fn coarser_risk_level_matches_normal_cdf() {
        let r = mc_safety_validation(0.25, 20_000, 0.0, 3).unwrap();
        assert!((r.bound - crate::normal::cdf(-r.kappa)).abs() < 1e-15);
        assert!(r.within(3.0), "{r:?}");
    }
}
