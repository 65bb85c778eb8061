//! Closed-loop controllers sharing one safety-filter interface.

pub mod cbf;
pub mod qp;
pub mod robust;
pub mod scp;
pub mod tracking;

use nalgebra::Vector3;
use std::fmt;
use std::str::FromStr;

use crate::bayes::{iw_init, iw_mean, iw_update, prediction_residual, IwState, ResidualTransform};
use crate::error::{Error, Result};
use crate::input::ControlInput;
use crate::nominal::{barrier_response_gradient, linearize_barrier, NominalModel};
use crate::path::ReferencePath;
use crate::plant::{LoadVector, ResponseVector, VehicleParams, VehicleState};
use crate::uncertainty::{
    barrier_distribution, effective_response, load_scale, load_variance, BarrierMode, BarrierSpec,
    LoadCovariance, ResponseCovariance, LOAD_SCALE_FLOOR,
};

use cbf::{classic_cbf_filter, normalized_deviation, r2cbf_filter, FilterConfig, FilterOutput};
use qp::{QpProblem, QpSolution};
use robust::{robust_cbf_filter, ErrorBound, RobustEstimatorState};
use tracking::{nominal_control, SpeedTracker, TrackingGains};

/// Deviation from the projected nominal above which a step counts as filtered.
pub const DEVIATION_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    PureClf,
    ClassicCbf,
    RobustCbf,
    R2Cbf,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::PureClf,
        ControllerKind::ClassicCbf,
        ControllerKind::RobustCbf,
        ControllerKind::R2Cbf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::PureClf => "pure-clf",
            ControllerKind::ClassicCbf => "classic-cbf",
            ControllerKind::RobustCbf => "robust-cbf",
            ControllerKind::R2Cbf => "r2cbf",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "controller",
                reason: format!("unknown controller `{s}`"),
            })
    }
}

/// Ablations of the risk-aware filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    #[default]
    Full,
    /// Adds the load-variance term of the barrier to the risk margin.
    LoadVar,
    /// `kappa = 0`: deterministic constraint at the learned linearization.
    NoCvar,
    /// Covariance frozen at the prior.
    NoBayes,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::LoadVar, Variant::NoCvar, Variant::NoBayes];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LoadVar => "loadvar",
            Variant::NoCvar => "no-cvar",
            Variant::NoBayes => "no-bayes",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "variant",
                reason: format!("unknown variant `{s}`"),
            })
    }
}

/// Everything the controllers need besides the vehicle parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyConfig {
    pub filter: FilterConfig,
    pub barrier: BarrierSpec,
    pub mode: BarrierMode,
    pub kappa: f64,
    pub gains: TrackingGains,
    /// Prior response variances `[beta, omega, a_y]`.
    pub prior_variances: Vector3<f64>,
    pub nu0: f64,
    pub forgetting: f64,
    pub transform: ResidualTransform,
    /// Load-estimate covariance used by the LoadVar ablation.
    pub load_covariance: LoadCovariance,
    pub estimator_gain: Vector3<f64>,
    pub error_bound: ErrorBound,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            barrier: BarrierSpec::default(),
            mode: BarrierMode::Instantaneous,
            kappa: crate::cvar::kappa(crate::cvar::RiskLevel::new(0.05).expect("valid risk level")),
            gains: TrackingGains::default(),
            prior_variances: Vector3::new(
                0.8f64.to_radians().powi(2),
                0.3f64.to_radians().powi(2),
                0.5f64.powi(2),
            ),
            nu0: 50.0,
            forgetting: 0.99,
            transform: ResidualTransform::Transformed,
            load_covariance: LoadCovariance::from_diagonal_element(7_500.0f64.powi(2)),
            estimator_gain: Vector3::repeat(5.0),
            error_bound: ErrorBound::default(),
        }
    }
}

/// What the controller sees each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Pose and speed used for path tracking.
    pub state: VehicleState,
    /// Measured `[beta, omega, a_y]`.
    pub r: ResponseVector,
    /// Estimated wheel loads.
    pub loads: LoadVector,
    pub v_ref: f64,
}

/// Per-step controller diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub u_nom: ControlInput,
    pub u: ControlInput,
    pub xi: f64,
    pub iterations: usize,
    pub stalled: bool,
    pub kkt_max: f64,
    /// Barrier row has a positive multiplier.
    pub active: bool,
    /// Output differs from the envelope-projected nominal by more than [`DEVIATION_THRESHOLD`].
    pub deviated: bool,
    pub sigma_param: f64,
    pub margin: f64,
    pub violation: f64,
    pub mu_h: f64,
    pub sigma_h: f64,
    pub w: f64,
    pub sigma_hat: ResponseCovariance,
    pub jacobian_fallback: bool,
    pub last_qp: Option<(QpProblem, QpSolution)>,
}

/// Stateful controller: tracking law, optional safety filter, covariance
/// learning and disturbance observer.
#[derive(Debug, Clone)]
pub struct Controller {
    pub kind: ControllerKind,
    pub variant: Variant,
    pub cfg: SafetyConfig,
    pub params: VehicleParams,
    prev_u: ControlInput,
    prev_r: Option<ResponseVector>,
    prev_vx: f64,
    iw: IwState,
    estimator: Option<RobustEstimatorState>,
    speed: SpeedTracker,
}

impl Controller {
    pub fn new(
        kind: ControllerKind,
        variant: Variant,
        cfg: SafetyConfig,
        params: VehicleParams,
        initial_u: ControlInput,
    ) -> Result<Self> {
        cfg.barrier.validate()?;
        cfg.filter.scp.validate()?;
        let iw = iw_init(&cfg.prior_variances, Some(cfg.nu0), cfg.forgetting)?;
        Ok(Self {
            kind,
            variant,
            cfg,
            params,
            prev_u: initial_u,
            prev_r: None,
            prev_vx: 0.0,
            iw,
            estimator: None,
            speed: SpeedTracker::default(),
        })
    }

    pub fn iw_state(&self) -> &IwState {
        &self.iw
    }

    pub fn covariance_estimate(&self) -> Result<ResponseCovariance> {
        iw_mean(&self.iw)
    }

    fn learns_covariance(&self) -> bool {
        self.kind == ControllerKind::R2Cbf && self.variant != Variant::NoBayes
    }

    pub fn step(&mut self, obs: &Observation, path: &ReferencePath) -> Result<StepDiagnostics> {
        let dt = self.cfg.filter.dt;
        let vx = obs.state.vx;
        let model = NominalModel::new(&self.params, vx)?;

        let mut jacobian_fallback = false;
        if self.learns_covariance() {
            if let Some(r_prev) = self.prev_r {
                let prev_model = NominalModel::new(&self.params, self.prev_vx)?;
                let res = prediction_residual(&r_prev, &obs.r, &self.prev_u.to_vector(), &prev_model, dt)?;
                jacobian_fallback = res.identity_fallback;
                self.iw = iw_update(&self.iw, &res, self.cfg.transform)?;
            }
        }
        let sigma_hat = iw_mean(&self.iw)?;

        let err_rate = self.speed.error_rate(obs.v_ref, vx, dt);
        let u_nom = nominal_control(&obs.state, path, obs.v_ref, err_rate, &self.cfg.gains, &self.params)?;

        let w = load_scale(&obs.loads, &self.cfg.barrier)?;
        if w < LOAD_SCALE_FLOOR {
            return Err(Error::SingularLoadRegime {
                w,
                floor: LOAD_SCALE_FLOOR,
            });
        }
        let r_eff = effective_response(&obs.r, &self.prev_u.to_vector(), &model, self.cfg.mode);
        let lin = linearize_barrier(&r_eff, w, &model);
        let spec = &self.cfg.barrier;
        let k = self.cfg.filter.k_alpha;
        let prev = self.prev_u;

        let (out, sigma_h): (FilterOutput, f64) = match self.kind {
            ControllerKind::PureClf => {
                let u = self.cfg.filter.limits.clamp(&u_nom, &prev, dt);
                let out = FilterOutput {
                    u,
                    xi: 0.0,
                    violation: 0.0,
                    iterations: 0,
                    stalled: false,
                    kkt: Default::default(),
                    sigma: 0.0,
                    margin: 0.0,
                    active: false,
                    last_qp: None,
                };
                (out, 0.0)
            }
            ControllerKind::ClassicCbf => {
                let mu_h = spec.barrier(r_eff[0], w);
                (classic_cbf_filter(&lin, mu_h, &u_nom, &prev, &self.cfg.filter)?, 0.0)
            }
            ControllerKind::RobustCbf => {
                let mu_h = spec.barrier(r_eff[0], w);
                let est = match self.estimator {
                    Some(e) => e,
                    None => RobustEstimatorState::new(&obs.r, self.cfg.estimator_gain, self.cfg.error_bound)?,
                };
                let grad = barrier_response_gradient(&r_eff, w);
                let ro = robust_cbf_filter(&obs.r, &lin, &grad, mu_h, &model, &u_nom, &prev, &est, &self.cfg.filter)?;
                let mut est = est;
                est.advance(&obs.r, &ro.filter.u.to_vector(), &model, dt);
                self.estimator = Some(est);
                (ro.filter, 0.0)
            }
            ControllerKind::R2Cbf => {
                let dist = barrier_distribution(&r_eff, w, sigma_hat[(0, 0)], spec)?;
                let mut extra = k * k * dist.sigma_h2;
                if self.variant == Variant::LoadVar {
                    extra += k * k * load_variance(&obs.loads, &self.cfg.load_covariance, spec)?;
                }
                let kappa = if self.variant == Variant::NoCvar { 0.0 } else { self.cfg.kappa };
                let out = r2cbf_filter(&lin, dist.mu_h, &sigma_hat, extra, kappa, &u_nom, &prev, &self.cfg.filter)?;
                (out, dist.sigma_h())
            }
        };

        let viol = self.cfg.filter.limits.violation(&out.u, &prev, dt);
        if viol > 1e-9 * self.params.limits.torque_max {
            return Err(Error::Invariant(format!("actuator envelope violated by {viol:e}")));
        }
        let deviated = normalized_deviation(&out.u, &u_nom, &prev, &self.cfg.filter) > DEVIATION_THRESHOLD;

        self.prev_u = out.u;
        self.prev_r = Some(obs.r);
        self.prev_vx = vx;
        Ok(StepDiagnostics {
            u_nom,
            u: out.u,
            xi: out.xi,
            iterations: out.iterations,
            stalled: out.stalled,
            kkt_max: out.kkt.max(),
            active: out.active,
            deviated,
            sigma_param: out.sigma,
            margin: out.margin,
            violation: out.violation,
            mu_h: spec.barrier(r_eff[0], w),
            sigma_h,
            w,
            sigma_hat,
            jacobian_fallback,
            last_qp: out.last_qp,
        })
    }
}
