//! Closed-loop simulation of one controller over one scenario.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{compute_metrics, MetricLimits, MetricSample, MetricsReport};
use super::scenario::Scenario;
use crate::controller::qp::verify_solution;
use crate::controller::{Controller, ControllerKind, Observation, SafetyConfig, Variant};
use crate::controller::tracking::tracking_error;
use crate::error::{Error, Result};
use crate::input::ControlInput;
use crate::path::wrap_angle;
use crate::plant::{measure, roll_proxy, sample, step_plant, SensorNoiseSpec, VehicleParams, VehicleState};
use crate::uncertainty::check_covariance;

/// Fraction of steps whose QP certificate is re-derived independently.
pub const KKT_AUDIT_FRACTION: f64 = 0.01;
/// KKT tolerance for the audit.
pub const KKT_TOLERANCE: f64 = 1e-6;

/// One control period.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub t: f64,
    pub state: VehicleState,
    pub beta: f64,
    pub ay: f64,
    pub phi: f64,
    pub e_y: f64,
    pub e_psi: f64,
    pub r_meas: [f64; 3],
    pub v_ref: f64,
    pub u_nom: ControlInput,
    pub u: ControlInput,
    pub xi: f64,
    pub iterations: usize,
    pub kkt_max: f64,
    pub active: bool,
    pub deviated: bool,
    pub sigma_param: f64,
    pub margin: f64,
    pub violation: f64,
    pub mu_h: f64,
    pub sigma_h: f64,
    pub w: f64,
    pub sigma_hat_beta: f64,
    pub friction_excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Sideslip beyond 90 degrees or non-finite state at `t`.
    Diverged { t: f64 },
    /// The controller raised an error at `t`.
    Failed { t: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub controller: ControllerKind,
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<StepRow>,
    pub status: RunStatus,
    pub metrics: MetricsReport,
    /// Hard-assertion failures (envelope, friction circle, covariance, KKT audit).
    pub assertion_failures: Vec<String>,
    pub kkt_audits: usize,
    pub kkt_audit_max: f64,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Closed-loop run settings that do not belong to the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub kind: ControllerKind,
    pub variant: Variant,
    pub safety: SafetyConfig,
    pub params: VehicleParams,
    pub noise: SensorNoiseSpec,
    pub limits: MetricLimits,
    pub config_hash: String,
}

impl RunSpec {
    pub fn new(kind: ControllerKind) -> Self {
        Self {
            kind,
            variant: Variant::Full,
            safety: SafetyConfig::default(),
            params: VehicleParams::default(),
            noise: SensorNoiseSpec::default(),
            limits: MetricLimits::default(),
            config_hash: String::from("default"),
        }
    }
}

fn friction_tolerance(params: &VehicleParams) -> f64 {
    1e-6 * params.static_load()
}

pub fn run_closed_loop(scenario: &Scenario, spec: &RunSpec, seed: u64) -> Result<RunRecord> {
    scenario.validate()?;
    let dt = scenario.dt;
    let mut safety = spec.safety.clone();
    safety.filter.dt = dt;
    safety.filter.limits = spec.params.limits;
    let mut ctrl = Controller::new(spec.kind, spec.variant, safety, spec.params, ControlInput::default())?;

    // independent streams for sensor noise and for the audit sampler
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ spec.noise.seed.rotate_left(17));
    let mut audit_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED_A0D1));

    let mut state = scenario.initial_state();
    let mut truth = sample(&state, &ControlInput::default(), &spec.params, &scenario.mu);
    let mut rows = Vec::with_capacity(scenario.steps());
    let mut status = RunStatus::Completed;
    let mut failures = Vec::new();
    let mut audits = 0;
    let mut audit_max: f64 = 0.0;

    for k in 0..scenario.steps() {
        let t = k as f64 * dt;
        let beta = state.beta();
        if !state.is_finite() || beta.abs() > std::f64::consts::FRAC_PI_2 {
            status = RunStatus::Diverged { t };
            break;
        }
        let (r_meas, f_meas) = measure(&truth, &truth.loads, &spec.noise, &mut noise_rng);
        let v_ref = scenario.v_ref(t);
        let obs = Observation {
            state,
            r: r_meas,
            loads: f_meas,
            v_ref,
        };
        let diag = match ctrl.step(&obs, &scenario.path) {
            Ok(d) => d,
            Err(Error::Invariant(msg)) => {
                failures.push(format!("t={t:.2}: {msg}"));
                status = RunStatus::Failed { t, reason: msg };
                break;
            }
            Err(e) => {
                status = RunStatus::Failed {
                    t,
                    reason: e.to_string(),
                };
                break;
            }
        };
        if let Err(e) = check_covariance(&diag.sigma_hat, "learned response covariance", true) {
            failures.push(format!("t={t:.2}: {e}"));
        }
        if let Some((prob, sol)) = &diag.last_qp {
            if audit_rng.random::<f64>() < KKT_AUDIT_FRACTION {
                let res = verify_solution(prob, sol).max();
                audits += 1;
                audit_max = audit_max.max(res);
                if res > KKT_TOLERANCE {
                    failures.push(format!("t={t:.2}: KKT audit residual {res:e}"));
                }
            }
        }
        if truth.friction_excess > friction_tolerance(&spec.params) {
            failures.push(format!("t={t:.2}: friction circle exceeded by {:.3e} N", truth.friction_excess));
        }

        let err = tracking_error(&state, &scenario.path, &spec.params)?;
        rows.push(StepRow {
            t,
            state,
            beta,
            ay: truth.ay,
            phi: roll_proxy(truth.ay, &spec.params),
            e_y: err.e_y,
            e_psi: wrap_angle(err.e_psi),
            r_meas: [r_meas[0], r_meas[1], r_meas[2]],
            v_ref,
            u_nom: diag.u_nom,
            u: diag.u,
            xi: diag.xi,
            iterations: diag.iterations,
            kkt_max: diag.kkt_max,
            active: diag.active,
            deviated: diag.deviated,
            sigma_param: diag.sigma_param,
            margin: diag.margin,
            violation: diag.violation,
            mu_h: diag.mu_h,
            sigma_h: diag.sigma_h,
            w: diag.w,
            sigma_hat_beta: diag.sigma_hat[(0, 0)],
            friction_excess: truth.friction_excess,
        });

        match step_plant(&state, &diag.u, &spec.params, &scenario.mu, dt) {
            Ok(next) => {
                truth = next;
                state = next.state;
            }
            Err(Error::PlantStall { .. }) => {
                status = RunStatus::Diverged { t: t + dt };
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let samples: Vec<MetricSample> = rows
        .iter()
        .map(|r| MetricSample {
            beta: r.beta,
            omega: r.state.omega_z,
            ay: r.ay,
            phi: r.phi,
            e_y: r.e_y,
            e_psi: r.e_psi,
            deviated: r.deviated,
            active: r.active,
        })
        .collect();
    let metrics = compute_metrics(&samples, &spec.limits);
    Ok(RunRecord {
        scenario: scenario.kind.to_string(),
        controller: spec.kind,
        variant: spec.variant,
        seed,
        config_hash: spec.config_hash.clone(),
        rows,
        status,
        metrics,
        assertion_failures: failures,
        kkt_audits: audits,
        kkt_audit_max: audit_max,
    })
}
