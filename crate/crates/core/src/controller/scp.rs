//! Trust-region sequential convex programming for the CVaR-constrained filter
//!
//! ```text
//! min  sum_i w_i (v_i - t_i)^2 + rho xi^2
//! s.t. a.v + b - kappa sigma(v) >= -xi,   lower <= v <= upper,   xi >= 0
//! sigma(v)^2 = (P v + q)' S (P v + q) + extra
//! ```
//!
//! Each iteration freezes `sigma` at the current iterate, which turns the
//! risk row into a linear row of a QP, then backtracks on the exact merit.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, KktResiduals, QpProblem, QpSolution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScpConfig {
    /// Trust radius as a fraction of `||upper_box - lower_box||_inf`.
    pub trust_fraction: f64,
    pub violation_tol: f64,
    pub step_tol: f64,
    pub max_iterations: usize,
    pub backtracking: Vec<f64>,
}

impl Default for ScpConfig {
    fn default() -> Self {
        Self {
            trust_fraction: 0.1,
            violation_tol: 1e-3,
            step_tol: 1e-4,
            max_iterations: 10,
            backtracking: vec![0.5, 0.25, 0.125],
        }
    }
}

impl ScpConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.trust_fraction > 0.0
            && self.violation_tol > 0.0
            && self.step_tol > 0.0
            && self.max_iterations >= 1
            && self.backtracking.iter().all(|t| *t > 0.0 && *t < 1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "scp",
                reason: "tolerances, trust fraction and backtracking factors must be positive".into(),
            })
        }
    }
}

/// Risk-constrained program over decision variables `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvarProgram {
    pub weights: DVector<f64>,
    pub target: DVector<f64>,
    /// Effective bounds for this step (box intersected with rate limits).
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// `||u_max - u_min||_inf` of the full actuator box, sets the trust radius.
    pub span_inf: f64,
    pub a: DVector<f64>,
    pub b: f64,
    pub kappa: f64,
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub extra: f64,
    pub rho: f64,
}

impl CvarProgram {
    pub fn sigma(&self, v: &DVector<f64>) -> f64 {
        let z = &self.p * v + &self.q;
        ((z.transpose() * &self.cov * &z)[0] + self.extra).max(0.0).sqrt()
    }

    /// Constraint value `a.v + b - kappa sigma(v)`; feasible without slack iff `>= 0`.
    pub fn margin(&self, v: &DVector<f64>) -> f64 {
        self.a.dot(v) + self.b - self.kappa * self.sigma(v)
    }

    pub fn cost(&self, v: &DVector<f64>) -> f64 {
        let d = v - &self.target;
        d.component_mul(&d).dot(&self.weights)
    }

    /// Objective with the slack eliminated at its optimal value.
    pub fn merit(&self, v: &DVector<f64>) -> f64 {
        let xi = (-self.margin(v)).max(0.0);
        self.cost(v) + self.rho * xi * xi
    }

    /// The QP with `sigma` frozen at `sigma_k`, restricted to the trust box around `center`.
    pub fn frozen_qp(&self, sigma_k: f64, center: &DVector<f64>, radius: f64) -> QpProblem {
        let n = self.target.len();
        let lower = DVector::from_fn(n, |i, _| self.lower[i].max(center[i] - radius));
        let upper = DVector::from_fn(n, |i, _| self.upper[i].min(center[i] + radius));
        QpProblem {
            weights: self.weights.clone(),
            target: self.target.clone(),
            rho: self.rho,
            lower,
            upper,
            rows: vec![(self.a.clone(), self.kappa * sigma_k - self.b)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScpOutcome {
    pub v: DVector<f64>,
    /// Slack of the last accepted subproblem.
    pub xi_qp: f64,
    /// `max(0, -(a.v + b - kappa sigma(v)))` at the returned point.
    pub violation: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub stalled: bool,
    pub kkt: KktResiduals,
    /// Infinity-norm length of every accepted step.
    pub steps: Vec<f64>,
    /// Last subproblem and its solution, kept for independent re-verification.
    pub last_qp: Option<(QpProblem, QpSolution)>,
}

pub fn scp_solve(prog: &CvarProgram, start: &DVector<f64>, cfg: &ScpConfig) -> Result<ScpOutcome> {
    let n = prog.target.len();
    for i in 0..n {
        if !(prog.lower[i] <= prog.upper[i]) {
            return Err(Error::QpInfeasibleBox {
                index: i,
                lower: prog.lower[i],
                upper: prog.upper[i],
            });
        }
    }
    let radius = cfg.trust_fraction * prog.span_inf;
    let mut v = DVector::from_fn(n, |i, _| start[i].clamp(prog.lower[i], prog.upper[i]));
    let mut out = ScpOutcome {
        v: v.clone(),
        xi_qp: 0.0,
        violation: 0.0,
        sigma: prog.sigma(&v),
        iterations: 0,
        stalled: false,
        kkt: KktResiduals::default(),
        steps: Vec::new(),
        last_qp: None,
    };
    let mut factors = vec![1.0];
    factors.extend_from_slice(&cfg.backtracking);

    for k in 0..cfg.max_iterations {
        out.iterations = k + 1;
        let sigma_k = prog.sigma(&v);
        let qp = prog.frozen_qp(sigma_k, &v, radius);
        let sol = solve_qp(&qp, Some(&v))?;
        let d = &sol.u - &v;
        let phi0 = prog.merit(&v);
        let accepted = factors.iter().find_map(|&tau| {
            let cand = &v + &d * tau;
            (prog.merit(&cand) <= phi0 + 1e-12 * phi0.abs().max(1.0)).then_some((tau, cand))
        });
        out.kkt = sol.kkt;
        out.xi_qp = sol.xi;
        out.last_qp = Some((qp, sol));
        let Some((tau, cand)) = accepted else {
            out.stalled = true;
            break;
        };
        let step = (d * tau).amax();
        let inside_trust = (0..n).all(|i| (cand[i] - v[i]).abs() < radius * (1.0 - 1e-9));
        v = cand;
        out.steps.push(step);
        // a full, untruncated step that leaves sigma unchanged solved the exact problem
        let sigma_fixed = (prog.sigma(&v) - sigma_k).abs() <= 1e-12 * sigma_k.max(1e-300);
        if step <= cfg.step_tol || (tau == 1.0 && inside_trust && sigma_fixed) {
            break;
        }
    }
    out.sigma = prog.sigma(&v);
    out.violation = (-prog.margin(&v)).max(0.0);
    out.v = v;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_dim(target: f64, a: f64, b: f64, kappa: f64, p: f64, q: f64, s2: f64, extra: f64) -> CvarProgram {
        CvarProgram {
            weights: DVector::from_element(1, 1.0),
            target: DVector::from_element(1, target),
            lower: DVector::from_element(1, -1.0),
            upper: DVector::from_element(1, 1.0),
            span_inf: 2.0,
            a: DVector::from_element(1, a),
            b,
            kappa,
            p: DMatrix::from_element(1, 1, p),
            q: DVector::from_element(1, q),
            cov: DMatrix::from_element(1, 1, s2),
            extra,
            rho: 1e6,
        }
    }

    /// Dense 1e-4 grid over [-1, 1] of the merit (slack eliminated exactly).
    fn grid_min(prog: &CvarProgram) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=20_000 {
            let v = -1.0 + i as f64 * 1e-4;
            let m = prog.merit(&DVector::from_element(1, v));
            if m < best.0 {
                best = (m, v);
            }
        }
        best.1
    }

    #[test]
    fn zero_variance_is_one_qp() {
        let prog = one_dim(0.8, -1.0, 0.5, 2.06, 0.0, 0.0, 0.0, 0.0);
        let out = scp_solve(&prog, &DVector::from_element(1, 0.4), &ScpConfig::default()).unwrap();
        // feasible region v <= 0.5
        assert!((out.v[0] - 0.5).abs() < 1e-5);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn inactive_constraint_returns_target() {
        let prog = one_dim(0.3, 1.0, 10.0, 2.06, 0.2, 0.1, 0.5, 0.01);
        let out = scp_solve(&prog, &DVector::from_element(1, 0.3), &ScpConfig::default()).unwrap();
        assert_eq!(out.v[0], 0.3);
        assert_eq!(out.violation, 0.0);
    }

    #[test]
    fn fixed_point_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ScpConfig {
            max_iterations: 50,
            ..ScpConfig::default()
        };
        let mut checked = 0;
        while checked < 40 {
            let prog = one_dim(
                rng.random_range(-0.9..0.9),
                rng.random_range(-2.0..2.0),
                rng.random_range(-0.5..1.0),
                2.06,
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.2..0.2),
                rng.random_range(0.0..0.5),
                rng.random_range(0.0..0.01),
            );
            let out = scp_solve(&prog, &DVector::from_element(1, 0.0), &cfg).unwrap();
            if out.stalled {
                continue;
            }
            let g = grid_min(&prog);
            assert!((out.v[0] - g).abs() < 1e-3, "scp {} grid {}", out.v[0], g);
            checked += 1;
        }
    }

    #[test]
    fn steps_respect_trust_radius() {
        let prog = one_dim(0.9, -1.0, -0.2, 2.06, 0.3, 0.0, 0.2, 0.0);
        let out = scp_solve(&prog, &DVector::from_element(1, 0.9), &ScpConfig::default()).unwrap();
        for s in &out.steps {
            assert!(*s <= 0.2 + 1e-12);
        }
        assert!(out.violation < 1e-3 || out.xi_qp > 0.0);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = ScpConfig {
            backtracking: vec![1.5],
            ..ScpConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
