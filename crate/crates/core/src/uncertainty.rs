//! First-order (delta-method) propagation of measurement noise into the
//! sideslip barrier `h = w(F)^2 beta_lim^2 - beta^2` and into the response rate.

use nalgebra::{DMatrix, Matrix3, SMatrix, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::input::{InputVector, N_WHEELS};
use crate::nominal::NominalModel;
use crate::plant::{LoadVector, ResponseVector};

pub type ResponseCovariance = Matrix3<f64>;
pub type LoadCovariance = SMatrix<f64, N_WHEELS, N_WHEELS>;

/// Below this load scale the load-variance term is treated as divergent.
pub const LOAD_SCALE_FLOOR: f64 = 0.3;

/// Default bound on the barrier Hessian constant `L_h`.
pub const DEFAULT_HESSIAN_BOUND: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSpec {
    /// Sideslip limit (rad).
    pub beta_lim: f64,
    /// Load sensitivity exponent in (0, 1/2).
    pub gamma: f64,
    /// Nominal per-wheel load (N).
    pub fz_nom: f64,
    pub n_wheels: usize,
}

impl Default for BarrierSpec {
    fn default() -> Self {
        Self {
            beta_lim: 0.15,
            gamma: 0.3,
            fz_nom: 75_000.0,
            n_wheels: N_WHEELS,
        }
    }
}

impl BarrierSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_lim > 0.0) {
            return Err(Error::InvalidParameter {
                name: "beta_lim",
                reason: "must be positive".into(),
            });
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("{} outside (0, 0.5)", self.gamma),
            });
        }
        if !(self.fz_nom > 0.0) || self.n_wheels == 0 {
            return Err(Error::InvalidParameter {
                name: "fz_nom",
                reason: "nominal load and wheel count must be positive".into(),
            });
        }
        Ok(())
    }

    /// `h` at a given sideslip and load scale.
    pub fn barrier(&self, beta: f64, w: f64) -> f64 {
        w * w * self.beta_lim * self.beta_lim - beta * beta
    }
}

/// `w = (sum F / (n F_nom))^gamma`.
pub fn load_scale(fz: &LoadVector, spec: &BarrierSpec) -> Result<f64> {
    for (index, &value) in fz.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::LoadDomain { index, value });
        }
    }
    Ok((fz.sum() / (spec.n_wheels as f64 * spec.fz_nom)).powf(spec.gamma))
}

/// Gaussian summary `h ~ N(mu_h, sigma_h^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierDistribution {
    pub mu_h: f64,
    pub sigma_h2: f64,
}

impl BarrierDistribution {
    pub fn sigma_h(&self) -> f64 {
        self.sigma_h2.sqrt()
    }
}

/// Response-channel variance `grad_r h' Sigma_r grad_r h` with `grad_r h = [-2 w^2 beta, 0, 0]`.
fn response_term(beta: f64, w: f64, sigma_beta2: f64) -> f64 {
    let g = -2.0 * w * w * beta;
    g * g * sigma_beta2
}

/// Simplified model: only the sideslip noise contributes, `sigma_h^2 = 4 w^4 beta^2 sigma_beta^2`.
pub fn barrier_distribution(
    r: &ResponseVector,
    w: f64,
    sigma_beta2: f64,
    spec: &BarrierSpec,
) -> Result<BarrierDistribution> {
    if !(sigma_beta2 >= 0.0) {
        return Err(Error::VarianceDomain(sigma_beta2));
    }
    Ok(BarrierDistribution {
        mu_h: spec.barrier(r[0], w),
        sigma_h2: response_term(r[0], w, sigma_beta2),
    })
}

/// Full two-term variance including load uncertainty.
pub fn barrier_distribution_full(
    r: &ResponseVector,
    fz: &LoadVector,
    sigma_r: &ResponseCovariance,
    sigma_f: &LoadCovariance,
    spec: &BarrierSpec,
) -> Result<BarrierDistribution> {
    let w = load_scale(fz, spec)?;
    if w < LOAD_SCALE_FLOOR {
        return Err(Error::SingularLoadRegime {
            w,
            floor: LOAD_SCALE_FLOOR,
        });
    }
    let base = barrier_distribution(r, w, sigma_r[(0, 0)], spec)?;
    Ok(BarrierDistribution {
        mu_h: base.mu_h,
        sigma_h2: base.sigma_h2 + load_variance(fz, sigma_f, spec)?,
    })
}

/// Load contribution `grad_F h' Sigma_F grad_F h` alone.
pub fn load_variance(fz: &LoadVector, sigma_f: &LoadCovariance, spec: &BarrierSpec) -> Result<f64> {
    let g = load_gradient(fz, spec)?;
    Ok((g.transpose() * sigma_f * g)[0].max(0.0))
}

/// `dh/dF_k = (2 gamma beta_lim^2 / (n F_nom)) w^((2 gamma - 1)/gamma)`, equal for every wheel.
pub fn load_gradient(fz: &LoadVector, spec: &BarrierSpec) -> Result<LoadVector> {
    let w = load_scale(fz, spec)?;
    let c = 2.0 * spec.gamma * spec.beta_lim * spec.beta_lim
        / (spec.n_wheels as f64 * spec.fz_nom);
    let e = (2.0 * spec.gamma - 1.0) / spec.gamma;
    Ok(LoadVector::from_element(c * w.powf(e)))
}

/// Mean and covariance of `r_dot = f(r, u, F)` under Gaussian measurement noise.
pub fn response_derivative_distribution(
    r: &ResponseVector,
    u: &InputVector,
    sigma_r: &ResponseCovariance,
    sigma_f: &LoadCovariance,
    model: &NominalModel,
) -> (ResponseVector, ResponseCovariance) {
    let mean = model.response_rate(r, u);
    let jr = model.jacobian_r();
    let jf = model.jacobian_f(r);
    let cov = jr * sigma_r * jr.transpose() + jf * sigma_f * jf.transpose();
    (mean, symmetrize(&cov))
}

/// `L_h (sigma_beta / beta_lim)^2`: relative error bound of first-order propagation.
pub fn delta_error_bound(sigma_beta: f64, beta_lim: f64, l_h: f64) -> f64 {
    let rho = sigma_beta / beta_lim;
    l_h * rho * rho
}

/// Which sideslip the barrier is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BarrierMode {
    #[default]
    Instantaneous,
    /// `beta_eff = beta + T_pred beta_dot` under the nominal model.
    Predictive { t_pred: f64 },
}

/// Response with sideslip replaced per `mode`.
pub fn effective_response(
    r: &ResponseVector,
    u: &InputVector,
    model: &NominalModel,
    mode: BarrierMode,
) -> ResponseVector {
    match mode {
        BarrierMode::Instantaneous => *r,
        BarrierMode::Predictive { t_pred } => {
            let mut out = *r;
            out[0] += t_pred * model.response_rate(r, u)[0];
            out
        }
    }
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Symmetry to 1e-12 (relative) and eigenvalues >= -1e-10 (relative); strictly
/// positive when `spd` is set.
pub fn check_covariance<const N: usize>(
    m: &SMatrix<f64, N, N>,
    what: &'static str,
    spd: bool,
) -> Result<()> {
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).abs().max() / scale;
    let sym = symmetrize(m);
    let min_eig = SymmetricEigen::new(DMatrix::from_column_slice(N, N, sym.as_slice()))
        .eigenvalues
        .min();
    let ok_sym = asym <= 1e-12;
    let ok_eig = if spd {
        min_eig > 0.0
    } else {
        min_eig >= -1e-10 * scale
    };
    if ok_sym && ok_eig && m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::CovarianceDomain {
            what,
            asym,
            min_eig,
        })
    }
}

pub fn diag3(v: Vector3<f64>) -> ResponseCovariance {
    Matrix3::from_diagonal(&v)
}
