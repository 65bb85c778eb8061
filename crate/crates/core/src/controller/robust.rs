//! Disturbance-observer robust CBF baseline.
//!
//! `Delta_hat = Lambda r - xi`, `xi_dot = Lambda (f_hat + g_hat u + Delta_hat)`,
//! so `Delta_hat_dot = Lambda (Delta - Delta_hat)` for `r_dot = f_hat + g_hat u + Delta`.

use nalgebra::{SMatrix, Vector3};

use super::cbf::{row_filter, CbfRow, FilterConfig, FilterOutput};
use crate::error::{Error, Result};
use crate::input::{ControlInput, InputVector, N_INPUTS};
use crate::nominal::{BarrierLinearization, ControlMatrix, NominalModel};
use crate::plant::ResponseVector;

/// Error bound `e_bar(t) = e0 exp(-decay t) + e_inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBound {
    pub e0: f64,
    pub decay: f64,
    pub e_inf: f64,
}

impl Default for ErrorBound {
    fn default() -> Self {
        Self {
            e0: 0.5,
            decay: 5.0,
            e_inf: 0.05,
        }
    }
}

impl ErrorBound {
    pub fn at(&self, t: f64) -> f64 {
        self.e0 * (-self.decay * t.max(0.0)).exp() + self.e_inf
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustEstimatorState {
    pub xi: Vector3<f64>,
    pub lambda: Vector3<f64>,
    pub e_bar: ErrorBound,
    /// Time since initialization (s).
    pub t: f64,
}

impl RobustEstimatorState {
    /// `xi_0 = Lambda r_0`, so the initial estimate is zero.
    pub fn new(r0: &ResponseVector, lambda: Vector3<f64>, e_bar: ErrorBound) -> Result<Self> {
        if !lambda.iter().all(|l| *l > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: "estimator gains must be positive".into(),
            });
        }
        Ok(Self {
            xi: lambda.component_mul(r0),
            lambda,
            e_bar,
            t: 0.0,
        })
    }

    pub fn estimate(&self, r: &ResponseVector) -> Vector3<f64> {
        self.lambda.component_mul(r) - self.xi
    }

    /// Forward-Euler step of the internal state over `dt` with `u` applied at `r`.
    pub fn advance(&mut self, r: &ResponseVector, u: &InputVector, model: &NominalModel, dt: f64) {
        let rate = model.response_rate(r, u) + self.estimate(r);
        self.xi += dt * self.lambda.component_mul(&rate);
        self.t += dt;
    }

    pub fn error_bound(&self) -> f64 {
        self.e_bar.at(self.t)
    }
}

/// Moore-Penrose inverse of the control matrix; its rank must be at least 2.
pub fn control_pseudo_inverse(g: &ControlMatrix) -> Result<SMatrix<f64, N_INPUTS, 3>> {
    let svd = g.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-12 * smax.max(1e-300);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < 2 {
        return Err(Error::GDegenerate);
    }
    svd.pseudo_inverse(tol).map_err(|_| Error::GDegenerate)
}

/// Robust row in the applied input `u = mu_u - pinv(G) Delta_hat`:
/// `L_h u + b_h + grad_h . Delta_hat - |grad_h| e_bar + k mu_h >= -xi`.
pub fn robust_row(
    lin: &BarrierLinearization,
    grad_h: &Vector3<f64>,
    delta_hat: &Vector3<f64>,
    e_bar: f64,
    mu_h: f64,
    k_alpha: f64,
) -> CbfRow {
    CbfRow {
        a: lin.lh,
        b: grad_h.norm() * e_bar - grad_h.dot(delta_hat) - lin.bh - k_alpha * mu_h,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustOutput {
    pub filter: FilterOutput,
    pub delta_hat: Vector3<f64>,
    /// `u_nom - pinv(G) Delta_hat`, the disturbance-compensated nominal.
    pub compensated: ControlInput,
}

/// Filter the compensated nominal through the robust row. The estimator is
/// read at `r`; call [`RobustEstimatorState::advance`] with the applied input afterwards.
#[allow(clippy::too_many_arguments)]
pub fn robust_cbf_filter(
    r: &ResponseVector,
    lin: &BarrierLinearization,
    grad_h: &Vector3<f64>,
    mu_h: f64,
    model: &NominalModel,
    u_nom: &ControlInput,
    prev: &ControlInput,
    est: &RobustEstimatorState,
    cfg: &FilterConfig,
) -> Result<RobustOutput> {
    let pinv = control_pseudo_inverse(model.control_matrix())?;
    let delta_hat = est.estimate(r);
    let compensated = ControlInput::from_vector(&(u_nom.to_vector() - pinv * delta_hat));
    let row = robust_row(lin, grad_h, &delta_hat, est.error_bound(), mu_h, cfg.k_alpha);
    let filter = row_filter(&row, &compensated, prev, cfg)?;
    Ok(RobustOutput {
        filter,
        delta_hat,
        compensated,
    })
}
