//! Online identification of the response noise covariance with an
//! inverse-Wishart posterior fed by one-step prediction residuals.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::input::InputVector;
use crate::nominal::{LoadJacobian, NominalModel};
use crate::plant::ResponseVector;
use crate::uncertainty::{symmetrize, LoadCovariance, ResponseCovariance};

/// Response dimension `n_r`.
pub const N_R: usize = 3;

/// Default prior strength `2 n_r + 5`.
pub const DEFAULT_NU0: f64 = 2.0 * N_R as f64 + 5.0;

/// Above this `||dt J_r||_inf` the prediction Jacobian is replaced by the identity.
pub const JACOBIAN_CONDITION_LIMIT: f64 = 0.5;

fn min_dof() -> f64 {
    N_R as f64 + 1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IwState {
    pub psi: Matrix3<f64>,
    pub nu: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub e: Vector3<f64>,
    pub m: Matrix3<f64>,
    /// True when `M` fell back to the identity.
    pub identity_fallback: bool,
}

/// Whether residuals enter the scale matrix through `M^-1` or as measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualTransform {
    #[default]
    Transformed,
    Raw,
}

fn inf_norm(m: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Prediction Jacobian `M = I + dt J_r`, or `I` when `dt J_r` is too large.
pub fn prediction_jacobian(jr: &Matrix3<f64>, dt: f64) -> (Matrix3<f64>, bool) {
    let djr = jr * dt;
    if inf_norm(&djr) < JACOBIAN_CONDITION_LIMIT {
        (Matrix3::identity() + djr, false)
    } else {
        (Matrix3::identity(), true)
    }
}

/// `e = r_next - (r_prev + dt f(r_prev, u))` under the nominal model.
pub fn prediction_residual(
    r_prev: &ResponseVector,
    r_next: &ResponseVector,
    u: &InputVector,
    model: &NominalModel,
    dt: f64,
) -> Result<Residual> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    let predicted = r_prev + dt * model.response_rate(r_prev, u);
    let (m, identity_fallback) = prediction_jacobian(&model.jacobian_r(), dt);
    residual_from_parts(r_next - predicted, m, identity_fallback)
}

pub fn residual_from_parts(e: Vector3<f64>, m: Matrix3<f64>, identity_fallback: bool) -> Result<Residual> {
    let det = m.determinant();
    if !(det.abs() > 1e-12) {
        return Err(Error::JacobianDegenerate { det });
    }
    Ok(Residual {
        e,
        m,
        identity_fallback,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("forgetting factor {lambda} outside (0, 1]"),
        })
    }
}

/// Prior whose mean equals `diag(sigma_spec)`; `nu0` defaults to `2 n_r + 5`.
pub fn iw_init(sigma_spec: &Vector3<f64>, nu0: Option<f64>, lambda: f64) -> Result<IwState> {
    let nu = nu0.unwrap_or(DEFAULT_NU0);
    if !(nu > min_dof()) {
        return Err(Error::DofDomain { nu, min: min_dof() });
    }
    check_lambda(lambda)?;
    if !sigma_spec.iter().all(|v| *v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma_spec",
            reason: "prior variances must be positive".into(),
        });
    }
    Ok(IwState {
        psi: Matrix3::from_diagonal(sigma_spec) * (nu - min_dof()),
        nu,
        lambda,
    })
}

/// `Psi' = lambda Psi + v v'`, `nu' = lambda nu + 1`, with `v = M^-1 e` or `e`.
pub fn iw_update(state: &IwState, res: &Residual, transform: ResidualTransform) -> Result<IwState> {
    check_lambda(state.lambda)?;
    let v = match transform {
        ResidualTransform::Raw => res.e,
        ResidualTransform::Transformed => {
            let inv = res.m.try_inverse().ok_or(Error::JacobianDegenerate {
                det: res.m.determinant(),
            })?;
            inv * res.e
        }
    };
    let psi = symmetrize(&(state.psi * state.lambda + v * v.transpose()));
    Ok(IwState {
        psi,
        nu: state.lambda * state.nu + 1.0,
        lambda: state.lambda,
    })
}

/// Posterior mean `Psi / (nu - n_r - 1)`.
pub fn iw_mean(state: &IwState) -> Result<ResponseCovariance> {
    if !(state.nu > min_dof()) {
        return Err(Error::DofDomain {
            nu: state.nu,
            min: min_dof(),
        });
    }
    Ok(state.psi / (state.nu - min_dof()))
}

/// Steady-state degrees of freedom `1 / (1 - lambda)` (infinite for `lambda = 1`).
pub fn steady_state_dof(lambda: f64) -> f64 {
    1.0 / (1.0 - lambda)
}

/// `lambda* = 1 - sqrt(2 (n_r + 1) tau_dt / tr(Sigma_e))`.
pub fn optimal_lambda(tau_dt: f64, trace_sigma_e: f64) -> Result<f64> {
    if !(tau_dt >= 0.0 && trace_sigma_e > 0.0) {
        return Err(Error::InvalidParameter {
            name: "optimal_lambda",
            reason: "drift must be nonnegative and residual trace positive".into(),
        });
    }
    let lambda = 1.0 - (2.0 * (N_R as f64 + 1.0) * tau_dt / trace_sigma_e).sqrt();
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(lambda)
    } else {
        Err(Error::ForgettingDomain(lambda))
    }
}

/// `M Sigma_r M' + dt^2 J_F Sigma_F J_F'`, dominated by the residual second moment.
pub fn residual_covariance_lower_bound(
    m: &Matrix3<f64>,
    sigma_r: &ResponseCovariance,
    j_f: &LoadJacobian,
    sigma_f: &LoadCovariance,
    dt: f64,
) -> ResponseCovariance {
    symmetrize(&(m * sigma_r * m.transpose() + j_f * sigma_f * j_f.transpose() * (dt * dt)))
}

/// One-line diagnostic snapshot for the run log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IwSnapshot {
    pub trace_psi: f64,
    pub nu: f64,
    pub mean_diag: Vector3<f64>,
}

impl IwState {
    pub fn snapshot(&self) -> IwSnapshot {
        let mean = iw_mean(self).unwrap_or_else(|_| Matrix3::from_element(f64::NAN));
        IwSnapshot {
            trace_psi: self.psi.trace(),
            nu: self.nu,
            mean_diag: mean.diagonal(),
        }
    }
}
