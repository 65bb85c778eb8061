//! Barrier rows and the Classic / risk-aware safety filters over the physical input.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, KktResiduals, QpProblem, QpSolution};
use super::scp::{scp_solve, CvarProgram, ScpConfig};
use crate::error::Result;
use crate::input::{ActuatorLimits, ControlInput, InputVector, N_INPUTS};
use crate::nominal::{BarrierLinearization, InputRow};
use crate::uncertainty::ResponseCovariance;

/// Shared QP weights and class-K gain.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// `alpha(h) = k h` (1/s).
    pub k_alpha: f64,
    /// Diagonal weight on the normalized steering channel.
    pub q_steer: f64,
    /// Diagonal weight on each normalized torque channel.
    pub q_torque: f64,
    pub rho: f64,
    pub dt: f64,
    pub limits: ActuatorLimits,
    pub scp: ScpConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            k_alpha: 2.0,
            q_steer: 100.0,
            q_torque: 1.0,
            rho: 1e6,
            dt: 0.05,
            limits: ActuatorLimits::default(),
            scp: ScpConfig::default(),
        }
    }
}

impl FilterConfig {
    /// Per-channel normalization: the QP works on `u / scale`.
    pub fn scale(&self) -> InputVector {
        self.limits.box_upper()
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_fn(N_INPUTS, |i, _| if i == 0 { self.q_steer } else { self.q_torque })
    }
}

/// Variance of `L_h(r) u + b_h(r)` under response noise with covariance `sigma_r`,
/// `(grad_Lh u + grad_bh)' Sigma_r (grad_Lh u + grad_bh)`.
pub fn param_variance(u: &InputVector, lin: &BarrierLinearization, sigma_r: &ResponseCovariance) -> f64 {
    let z = lin.grad_lh * u + lin.grad_bh;
    (z.transpose() * sigma_r * z)[0].max(0.0)
}

/// Decomposition `u' A u + 2 u' c_x + c` of [`param_variance`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVarianceTerms {
    pub quadratic: f64,
    pub cross: f64,
    pub constant: f64,
}

pub fn param_variance_terms(
    u: &InputVector,
    lin: &BarrierLinearization,
    sigma_r: &ResponseCovariance,
) -> ParamVarianceTerms {
    let pu = lin.grad_lh * u;
    ParamVarianceTerms {
        quadratic: (pu.transpose() * sigma_r * pu)[0],
        cross: 2.0 * (pu.transpose() * sigma_r * lin.grad_bh)[0],
        constant: (lin.grad_bh.transpose() * sigma_r * lin.grad_bh)[0],
    }
}

/// Linear row `a.u + xi >= b` in the physical input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfRow {
    pub a: InputRow,
    pub b: f64,
}

impl CbfRow {
    /// Left side minus right side without slack; `>= 0` when satisfied.
    pub fn residual(&self, u: &InputVector) -> f64 {
        (self.a * u)[0] - self.b
    }
}

/// `L_h u + b_h + k mu_h - kappa sigma >= -xi` with `sigma` frozen.
pub fn build_cvar_row(
    lin: &BarrierLinearization,
    mu_h: f64,
    sigma_fixed: f64,
    k_alpha: f64,
    kappa: f64,
) -> CbfRow {
    CbfRow {
        a: lin.lh,
        b: kappa * sigma_fixed - lin.bh - k_alpha * mu_h,
    }
}

/// Result of one safety-filter call.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub u: ControlInput,
    pub xi: f64,
    /// Violation of the un-frozen risk row at the returned input.
    pub violation: f64,
    pub iterations: usize,
    pub stalled: bool,
    pub kkt: KktResiduals,
    pub sigma: f64,
    /// `kappa sigma` at the returned input.
    pub margin: f64,
    /// Barrier row multiplier is positive.
    pub active: bool,
    pub last_qp: Option<(QpProblem, QpSolution)>,
}

fn to_scaled(v: &InputVector, s: &InputVector) -> DVector<f64> {
    DVector::from_fn(N_INPUTS, |i, _| v[i] / s[i])
}

fn from_scaled(v: &DVector<f64>, s: &InputVector) -> InputVector {
    InputVector::from_fn(|i, _| v[i] * s[i])
}

/// Risk-aware filter: minimize `||u - u_nom||_Q^2 + rho xi^2` subject to
/// `L_h u + b_h + k mu_h - kappa sigma(u) >= -xi` and the actuator envelope,
/// with `sigma(u)^2 = param_variance(u) + extra`.
#[allow(clippy::too_many_arguments)]
pub fn r2cbf_filter(
    lin: &BarrierLinearization,
    mu_h: f64,
    sigma_r: &ResponseCovariance,
    extra: f64,
    kappa: f64,
    u_nom: &ControlInput,
    prev: &ControlInput,
    cfg: &FilterConfig,
) -> Result<FilterOutput> {
    let s = cfg.scale();
    let (lo, hi) = cfg.limits.bounds(prev, cfg.dt);
    let mut p = DMatrix::zeros(3, N_INPUTS);
    for i in 0..3 {
        for j in 0..N_INPUTS {
            p[(i, j)] = lin.grad_lh[(i, j)] * s[j];
        }
    }
    let prog = CvarProgram {
        weights: cfg.weights(),
        target: to_scaled(&u_nom.to_vector(), &s),
        lower: to_scaled(&lo, &s),
        upper: to_scaled(&hi, &s),
        span_inf: 2.0,
        a: DVector::from_fn(N_INPUTS, |i, _| lin.lh[i] * s[i]),
        b: lin.bh + cfg.k_alpha * mu_h,
        kappa,
        p,
        q: DVector::from_column_slice(lin.grad_bh.as_slice()),
        cov: DMatrix::from_column_slice(3, 3, sigma_r.as_slice()),
        extra: extra.max(0.0),
        rho: cfg.rho,
    };
    let out = scp_solve(&prog, &to_scaled(&prev.to_vector(), &s), &cfg.scp)?;
    let u = from_scaled(&out.v, &s);
    let active = out
        .last_qp
        .as_ref()
        .is_some_and(|(_, sol)| sol.row_multipliers[0] > 1e-12);
    Ok(FilterOutput {
        u: ControlInput::from_vector(&u),
        xi: out.xi_qp,
        violation: out.violation,
        iterations: out.iterations,
        stalled: out.stalled,
        kkt: out.kkt,
        sigma: out.sigma,
        margin: kappa * out.sigma,
        active,
        last_qp: out.last_qp,
    })
}

/// Single QP over an explicit row `a.u + xi >= b` with cost target `target`.
pub fn row_filter(row: &CbfRow, target: &ControlInput, prev: &ControlInput, cfg: &FilterConfig) -> Result<FilterOutput> {
    let s = cfg.scale();
    let (lo, hi) = cfg.limits.bounds(prev, cfg.dt);
    let qp = QpProblem {
        weights: cfg.weights(),
        target: to_scaled(&target.to_vector(), &s),
        rho: cfg.rho,
        lower: to_scaled(&lo, &s),
        upper: to_scaled(&hi, &s),
        rows: vec![(DVector::from_fn(N_INPUTS, |i, _| row.a[i] * s[i]), row.b)],
    };
    let sol = solve_qp(&qp, Some(&to_scaled(&prev.to_vector(), &s)))?;
    let u = from_scaled(&sol.u, &s);
    Ok(FilterOutput {
        u: ControlInput::from_vector(&u),
        xi: sol.xi,
        violation: (-row.residual(&u)).max(0.0),
        iterations: 1,
        stalled: false,
        kkt: sol.kkt,
        sigma: 0.0,
        margin: 0.0,
        active: sol.row_multipliers[0] > 1e-12,
        last_qp: Some((qp, sol)),
    })
}

/// Deterministic filter `L_h u + b_h + k mu_h >= -xi`.
pub fn classic_cbf_filter(
    lin: &BarrierLinearization,
    mu_h: f64,
    u_nom: &ControlInput,
    prev: &ControlInput,
    cfg: &FilterConfig,
) -> Result<FilterOutput> {
    let row = build_cvar_row(lin, mu_h, 0.0, cfg.k_alpha, 0.0);
    row_filter(&row, u_nom, prev, cfg)
}

/// Deviation of `u` from the envelope projection of `u_nom`, in normalized units.
pub fn normalized_deviation(u: &ControlInput, u_nom: &ControlInput, prev: &ControlInput, cfg: &FilterConfig) -> f64 {
    let s = cfg.scale();
    let proj = cfg.limits.clamp(u_nom, prev, cfg.dt).to_vector();
    let v = u.to_vector();
    (0..N_INPUTS).map(|i| ((v[i] - proj[i]) / s[i]).abs()).fold(0.0, f64::max)
}
