//! Ground-truth vehicle: a planar six-wheel rigid body with a linear tire that
//! saturates on the friction circle, a spatially varying adhesion field, a
//! quasi-static load model and the sensor models feeding the controller.

use nalgebra::{SVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::input::{ActuatorLimits, ControlInput, N_WHEELS};

pub const GRAVITY: f64 = 9.81;

/// Inner integration step (s). Control is held over the outer step.
pub const INNER_STEP: f64 = 0.005;

/// Body response `[beta, omega_z, a_y]` in (rad, rad/s, m/s^2).
pub type ResponseVector = Vector3<f64>;

/// Vertical wheel loads (N), ordered `[L1, R1, L2, R2, L3, R3]`.
pub type LoadVector = SVector<f64, N_WHEELS>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega_z: f64,
}

impl VehicleState {
    pub fn at_rest_heading_x(x: f64, y: f64, vx: f64) -> Self {
        Self {
            x,
            y,
            psi: 0.0,
            vx,
            vy: 0.0,
            omega_z: 0.0,
        }
    }

    /// Body sideslip `atan(vy/vx)`; `atan2` keeps it meaningful through a spin.
    pub fn beta(&self) -> f64 {
        self.vy.atan2(self.vx)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.psi, self.vx, self.vy, self.omega_z]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Reflection about the x axis.
    pub fn mirrored(&self) -> Self {
        Self {
            x: self.x,
            y: -self.y,
            psi: -self.psi,
            vx: self.vx,
            vy: -self.vy,
            omega_z: -self.omega_z,
        }
    }

    fn axpy(&self, k: f64, d: &StateDot) -> Self {
        Self {
            x: self.x + k * d.x,
            y: self.y + k * d.y,
            psi: self.psi + k * d.psi,
            vx: self.vx + k * d.vx,
            vy: self.vy + k * d.vy,
            omega_z: self.omega_z + k * d.omega_z,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct StateDot {
    x: f64,
    y: f64,
    psi: f64,
    vx: f64,
    vy: f64,
    omega_z: f64,
}

impl StateDot {
    fn combine(k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
        let f = |a: f64, b: f64, c: f64, d: f64| (a + 2.0 * b + 2.0 * c + d) / 6.0;
        Self {
            x: f(k1.x, k2.x, k3.x, k4.x),
            y: f(k1.y, k2.y, k3.y, k4.y),
            psi: f(k1.psi, k2.psi, k3.psi, k4.psi),
            vx: f(k1.vx, k2.vx, k3.vx, k4.vx),
            vy: f(k1.vy, k2.vy, k3.vy, k4.vy),
            omega_z: f(k1.omega_z, k2.omega_z, k3.omega_z, k4.omega_z),
        }
    }
}

/// Vehicle constants. Defaults are the six-wheel mining truck of the
/// reference study plus the documented choices for quantities it leaves open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Mass (kg).
    pub m: f64,
    /// Yaw inertia (kg m^2).
    pub iz: f64,
    /// CoG to front axle (m).
    pub a: f64,
    /// CoG to rear axle (m).
    pub b: f64,
    /// Track width B (m).
    pub track: f64,
    /// Cornering stiffness per wheel (N/rad).
    pub c_beta: f64,
    /// Wheel radius (m).
    pub rw: f64,
    /// Nominal vertical load per wheel (N).
    pub fz_nom: f64,
    /// CoG height (m). Keeps every quasi-static load positive for |a_y| < g B / (6 h).
    pub h_cog: f64,
    /// Quadratic drag coefficient: F_drag = c_drag vx |vx| (N s^2/m^2).
    pub c_drag: f64,
    /// Roll stiffness of the static roll proxy (N m/rad).
    pub k_roll: f64,
    pub limits: ActuatorLimits,
}

/// Roll-proxy calibration point: 5 m/s^2 of lateral acceleration gives 8 degrees of roll.
pub const ROLL_CALIBRATION_AY: f64 = 5.0;
pub const ROLL_CALIBRATION_DEG: f64 = 8.0;

impl Default for VehicleParams {
    fn default() -> Self {
        let m = 45_000.0;
        let h_cog = 0.75;
        Self {
            m,
            iz: 3_446_811.0,
            a: 3.155,
            b: 3.155,
            track: 4.147,
            c_beta: 1.728e6,
            rw: 0.8,
            fz_nom: 75_000.0,
            h_cog,
            c_drag: 6.0,
            k_roll: m * h_cog * ROLL_CALIBRATION_AY / ROLL_CALIBRATION_DEG.to_radians(),
            limits: ActuatorLimits::default(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64); 12] = [
            ("m", self.m),
            ("iz", self.iz),
            ("a", self.a),
            ("b", self.b),
            ("track", self.track),
            ("c_beta", self.c_beta),
            ("rw", self.rw),
            ("fz_nom", self.fz_nom),
            ("h_cog", self.h_cog),
            ("k_roll", self.k_roll),
            ("delta_max", self.limits.delta_max),
            ("torque_max", self.limits.torque_max),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if !(self.c_drag >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "c_drag",
                reason: "must be nonnegative".into(),
            });
        }
        if !(self.limits.delta_rate_max > 0.0 && self.limits.torque_rate_max > 0.0) {
            return Err(Error::InvalidParameter {
                name: "rate limits",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.a + self.b
    }

    /// Longitudinal wheel positions relative to the CoG.
    pub fn wheel_x(&self) -> [f64; N_WHEELS] {
        [self.a, self.a, 0.0, 0.0, -self.b, -self.b]
    }

    /// Lateral wheel positions (left positive).
    pub fn wheel_y(&self) -> [f64; N_WHEELS] {
        let h = 0.5 * self.track;
        [h, -h, h, -h, h, -h]
    }

    /// Road-wheel steer angle per wheel for steering command `delta`.
    pub fn wheel_steer(&self, delta: f64) -> [f64; N_WHEELS] {
        [-delta, -delta, 0.0, 0.0, 0.0, 0.0]
    }

    pub fn static_load(&self) -> f64 {
        self.m * GRAVITY / N_WHEELS as f64
    }
}

/// Spatial adhesion field.
#[derive(Debug, Clone, PartialEq)]
pub enum MuField {
    Uniform {
        mu: f64,
    },
    /// Bands across the road: `mu` oscillates between bounds along x.
    SinusoidBand {
        lo: f64,
        hi: f64,
        wavelength: f64,
    },
    /// Piecewise-constant square patches with smoothed hashed values.
    RandomPatch {
        lo: f64,
        hi: f64,
        patch: f64,
        seed: u64,
    },
}

impl MuField {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            MuField::Uniform { mu } => (mu, mu),
            MuField::SinusoidBand { lo, hi, .. } | MuField::RandomPatch { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo > 0.0 && hi >= lo && hi <= 1.5) {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("bounds [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1.5"),
            });
        }
        match *self {
            MuField::SinusoidBand { wavelength, .. } if !(wavelength > 0.0) => {
                Err(Error::InvalidParameter {
                    name: "mu.wavelength",
                    reason: "must be positive".into(),
                })
            }
            MuField::RandomPatch { patch, .. } if !(patch > 0.0) => Err(Error::InvalidParameter {
                name: "mu.patch",
                reason: "must be positive".into(),
            }),
            _ => Ok(()),
        }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        match *self {
            MuField::Uniform { mu } => mu,
            MuField::SinusoidBand { lo, hi, wavelength } => {
                let s = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * x / wavelength).sin());
                lo + (hi - lo) * s
            }
            MuField::RandomPatch {
                lo,
                hi,
                patch,
                seed,
            } => {
                let i = (x / patch).floor() as i64;
                let j = (y / patch).floor() as i64;
                let mut acc = 0.0;
                for di in -1..=1 {
                    for dj in -1..=1 {
                        acc += unit_hash(seed, i + di, j + dj);
                    }
                }
                // mean of nine uniforms, stretched so the bounds are reached, then clipped
                let s = (0.5 + 2.5 * (acc / 9.0 - 0.5)).clamp(0.0, 1.0);
                lo + (hi - lo) * s
            }
        }
    }
}

fn unit_hash(seed: u64, i: i64, j: i64) -> f64 {
    let mut z = seed
        ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Tire force in the wheel frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelForce {
    pub fx: f64,
    pub fy: f64,
}

impl WheelForce {
    pub fn magnitude(&self) -> f64 {
        self.fx.hypot(self.fy)
    }
}

/// Linear tire `Fy = C alpha`, drive force `T / R_w`, jointly clipped to the
/// friction circle of radius `mu Fz`.
pub fn tire_force(slip_angle: f64, drive_force: f64, fz: f64, mu: f64, c_beta: f64) -> WheelForce {
    let cap = mu * fz.max(0.0);
    let fy = c_beta * slip_angle;
    let fx = drive_force;
    let mag = fx.hypot(fy);
    if mag > cap {
        let s = if mag > 0.0 { cap / mag } else { 0.0 };
        WheelForce { fx: fx * s, fy: fy * s }
    } else {
        WheelForce { fx, fy }
    }
}

/// Per-wheel slip angle (rad) from body velocities and road-wheel steer.
pub fn slip_angles(state: &VehicleState, delta: f64, params: &VehicleParams) -> [f64; N_WHEELS] {
    let xs = params.wheel_x();
    let ys = params.wheel_y();
    let steer = params.wheel_steer(delta);
    let mut out = [0.0; N_WHEELS];
    for i in 0..N_WHEELS {
        let vxi = state.vx - ys[i] * state.omega_z;
        let vyi = state.vy + xs[i] * state.omega_z;
        out[i] = steer[i] - vyi.atan2(vxi);
    }
    out
}

/// Per-wheel tire forces in the wheel frame.
pub fn tire_forces(
    state: &VehicleState,
    u: &ControlInput,
    fz: &LoadVector,
    mu_local: &[f64; N_WHEELS],
    params: &VehicleParams,
) -> [WheelForce; N_WHEELS] {
    let alpha = slip_angles(state, u.delta, params);
    let mut out = [WheelForce::default(); N_WHEELS];
    for i in 0..N_WHEELS {
        out[i] = tire_force(alpha[i], u.torques[i] / params.rw, fz[i], mu_local[i], params.c_beta);
    }
    out
}

/// Quasi-static wheel loads from body accelerations.
///
/// Lateral transfer moves `m a_y h / B` onto each outer wheel (right side for
/// `a_y > 0` in the y-left frame); longitudinal transfer is
/// `-m a_x h / L (x_i - x_cog)` with `x_cog` the mean axle position, so both
/// terms cancel in the sum.
pub fn estimate_loads(ax: f64, ay: f64, params: &VehicleParams) -> LoadVector {
    let xs = params.wheel_x();
    let ys = params.wheel_y();
    let x_cog = xs.iter().sum::<f64>() / N_WHEELS as f64;
    let lat = params.m * ay * params.h_cog / params.track;
    let lon = params.m * ax * params.h_cog / params.wheelbase();
    LoadVector::from_fn(|i, _| {
        params.static_load() - lat * ys[i].signum() - lon * (xs[i] - x_cog)
    })
}

/// Static roll proxy `phi = a_y h m / K_roll` (rad).
pub fn roll_proxy(ay: f64, params: &VehicleParams) -> f64 {
    ay * params.h_cog * params.m / params.k_roll
}

/// Everything the plant exposes after a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub state: VehicleState,
    /// Body-frame longitudinal acceleration (m/s^2).
    pub ax: f64,
    /// Body-frame lateral acceleration (m/s^2).
    pub ay: f64,
    pub loads: LoadVector,
    pub forces: [WheelForce; N_WHEELS],
    pub mu_local: [f64; N_WHEELS],
    /// Largest `|F| - mu Fz` seen across all stages of the step (N).
    pub friction_excess: f64,
}

impl TruthSample {
    pub fn response(&self) -> ResponseVector {
        ResponseVector::new(self.state.beta(), self.state.omega_z, self.ay)
    }
}

struct Evaluation {
    dot: StateDot,
    ax: f64,
    ay: f64,
    loads: LoadVector,
    forces: [WheelForce; N_WHEELS],
    mu_local: [f64; N_WHEELS],
    friction_excess: f64,
}

fn wheel_mu(state: &VehicleState, params: &VehicleParams, field: &MuField) -> [f64; N_WHEELS] {
    let xs = params.wheel_x();
    let ys = params.wheel_y();
    let (s, c) = state.psi.sin_cos();
    let mut mu = [0.0; N_WHEELS];
    for i in 0..N_WHEELS {
        let wx = state.x + xs[i] * c - ys[i] * s;
        let wy = state.y + xs[i] * s + ys[i] * c;
        mu[i] = field.at(wx, wy);
    }
    mu
}

fn body_sums(
    forces: &[WheelForce; N_WHEELS],
    delta: f64,
    params: &VehicleParams,
) -> (f64, f64, f64) {
    let xs = params.wheel_x();
    let ys = params.wheel_y();
    let steer = params.wheel_steer(delta);
    let (mut fx, mut fy, mut mz) = (0.0, 0.0, 0.0);
    for i in 0..N_WHEELS {
        let (s, c) = steer[i].sin_cos();
        let bx = forces[i].fx * c - forces[i].fy * s;
        let by = forces[i].fx * s + forces[i].fy * c;
        fx += bx;
        fy += by;
        mz += xs[i] * by - ys[i] * bx;
    }
    (fx, fy, mz)
}

fn evaluate(
    state: &VehicleState,
    u: &ControlInput,
    params: &VehicleParams,
    field: &MuField,
) -> Evaluation {
    let mu_local = wheel_mu(state, params, field);
    let drag = params.c_drag * state.vx * state.vx.abs();

    // two passes: static loads give accelerations, which set the transferred loads
    let mut loads = LoadVector::from_element(params.static_load());
    let mut forces = tire_forces(state, u, &loads, &mu_local, params);
    let (mut fx, mut fy, mut mz) = body_sums(&forces, u.delta, params);
    for _ in 0..2 {
        let ax = (fx - drag) / params.m;
        let ay = fy / params.m;
        loads = estimate_loads(ax, ay, params);
        forces = tire_forces(state, u, &loads, &mu_local, params);
        (fx, fy, mz) = body_sums(&forces, u.delta, params);
    }

    let mut excess = f64::NEG_INFINITY;
    for i in 0..N_WHEELS {
        excess = excess.max(forces[i].magnitude() - mu_local[i] * loads[i].max(0.0));
    }

    let ax = (fx - drag) / params.m;
    let ay = fy / params.m;
    let (s, c) = state.psi.sin_cos();
    let dot = StateDot {
        x: state.vx * c - state.vy * s,
        y: state.vx * s + state.vy * c,
        psi: state.omega_z,
        vx: ax + state.vy * state.omega_z,
        vy: ay - state.vx * state.omega_z,
        omega_z: mz / params.iz,
    };
    Evaluation {
        dot,
        ax,
        ay,
        loads,
        forces,
        mu_local,
        friction_excess: excess,
    }
}

/// Instantaneous truth sample at `state` under input `u`.
pub fn sample(
    state: &VehicleState,
    u: &ControlInput,
    params: &VehicleParams,
    field: &MuField,
) -> TruthSample {
    let ev = evaluate(state, u, params, field);
    TruthSample {
        state: *state,
        ax: ev.ax,
        ay: ev.ay,
        loads: ev.loads,
        forces: ev.forces,
        mu_local: ev.mu_local,
        friction_excess: ev.friction_excess,
    }
}

/// Advance the plant by `dt` with `u` held constant, RK4 at [`INNER_STEP`].
pub fn step_plant(
    state: &VehicleState,
    u: &ControlInput,
    params: &VehicleParams,
    field: &MuField,
    dt: f64,
) -> Result<TruthSample> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    let n = (dt / INNER_STEP).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut s = *state;
    let mut excess = f64::NEG_INFINITY;
    for _ in 0..n {
        let e1 = evaluate(&s, u, params, field);
        let e2 = evaluate(&s.axpy(0.5 * h, &e1.dot), u, params, field);
        let e3 = evaluate(&s.axpy(0.5 * h, &e2.dot), u, params, field);
        let e4 = evaluate(&s.axpy(h, &e3.dot), u, params, field);
        excess = excess
            .max(e1.friction_excess)
            .max(e2.friction_excess)
            .max(e3.friction_excess)
            .max(e4.friction_excess);
        s = s.axpy(h, &StateDot::combine(&e1.dot, &e2.dot, &e3.dot, &e4.dot));
        if !(s.vx > 0.0) {
            return Err(Error::PlantStall { vx: s.vx });
        }
    }
    let mut out = sample(&s, u, params, field);
    out.friction_excess = out.friction_excess.max(excess);
    Ok(out)
}

/// Sensor noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoiseSpec {
    /// rad
    pub sigma_beta: f64,
    /// rad/s
    pub sigma_omega: f64,
    /// m/s^2
    pub sigma_ay: f64,
    /// N
    pub sigma_fz: f64,
    pub seed: u64,
}

impl Default for SensorNoiseSpec {
    fn default() -> Self {
        Self {
            sigma_beta: 0.3f64.to_radians(),
            sigma_omega: 0.06f64.to_radians(),
            sigma_ay: 0.06,
            sigma_fz: 7_500.0,
            seed: 0,
        }
    }
}

impl SensorNoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            sigma_beta: 0.0,
            sigma_omega: 0.0,
            sigma_ay: 0.0,
            sigma_fz: 0.0,
            seed: 0,
        }
    }

    /// Diagonal response covariance implied by the standard deviations.
    pub fn response_variances(&self) -> Vector3<f64> {
        Vector3::new(
            self.sigma_beta.powi(2),
            self.sigma_omega.powi(2),
            self.sigma_ay.powi(2),
        )
    }

    /// Normalized response noise level, per angular channel.
    pub fn rho_r(&self, beta_lim: f64, omega_lim: f64) -> f64 {
        (self.sigma_beta / beta_lim).max(self.sigma_omega / omega_lim)
    }

    pub fn rho_f(&self, fz_nom: f64) -> f64 {
        self.sigma_fz / fz_nom
    }
}

/// Noisy measurement of the response and of an externally supplied load estimate.
pub fn measure<R: Rng + ?Sized>(
    truth: &TruthSample,
    fz: &LoadVector,
    noise: &SensorNoiseSpec,
    rng: &mut R,
) -> (ResponseVector, LoadVector) {
    let mut draw = |sigma: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    };
    let r = truth.response();
    let r_meas = ResponseVector::new(
        r[0] + draw(noise.sigma_beta),
        r[1] + draw(noise.sigma_omega),
        r[2] + draw(noise.sigma_ay),
    );
    let mut f_meas = *fz;
    for v in f_meas.iter_mut() {
        *v += draw(noise.sigma_fz);
    }
    (r_meas, f_meas)
}
