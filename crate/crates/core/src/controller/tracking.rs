//! Nominal tracking law: Stanley steering at the front axle and PD speed control.

use crate::error::Result;
use crate::input::{ControlInput, N_WHEELS};
use crate::path::{wrap_angle, ReferencePath};
use crate::plant::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingGains {
    pub k_stanley: f64,
    /// N m per m/s of speed error, total over all wheels.
    pub k_p: f64,
    /// N m per m/s^2.
    pub k_d: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self {
            k_stanley: 0.4,
            k_p: 10_000.0,
            k_d: 1_000.0,
        }
    }
}

/// Path-frame errors at the front axle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    /// Lateral offset, positive when the axle is left of the path (m).
    pub e_y: f64,
    /// `psi - psi_path` wrapped (rad).
    pub e_psi: f64,
}

pub fn tracking_error(state: &VehicleState, path: &ReferencePath, params: &VehicleParams) -> Result<TrackingError> {
    path.validate()?;
    let (s, c) = state.psi.sin_cos();
    let pt = path.project(state.x + params.a * c, state.y + params.a * s);
    Ok(TrackingError {
        e_y: pt.e_y,
        e_psi: wrap_angle(state.psi - pt.heading),
    })
}

/// `delta = e_psi + atan(k e_y / vx)` (positive steers right) and an equal
/// torque split of `k_p e_v + k_d de_v/dt` plus drag feed-forward.
pub fn nominal_control(
    state: &VehicleState,
    path: &ReferencePath,
    v_ref: f64,
    speed_error_rate: f64,
    gains: &TrackingGains,
    params: &VehicleParams,
) -> Result<ControlInput> {
    let err = tracking_error(state, path, params)?;
    let vx = state.vx.max(0.5);
    let lim = &params.limits;
    let delta = (err.e_psi + (gains.k_stanley * err.e_y / vx).atan()).clamp(-lim.delta_max, lim.delta_max);

    let drag = params.c_drag * state.vx * state.vx.abs() * params.rw;
    let total = gains.k_p * (v_ref - state.vx) + gains.k_d * speed_error_rate + drag;
    let per_wheel = (total / N_WHEELS as f64).clamp(-lim.torque_max, lim.torque_max);
    Ok(ControlInput::uniform(delta, per_wheel))
}

/// PD speed loop with the derivative taken on successive speed errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpeedTracker {
    prev_error: Option<f64>,
}

impl SpeedTracker {
    pub fn error_rate(&mut self, v_ref: f64, vx: f64, dt: f64) -> f64 {
        let e = v_ref - vx;
        let rate = self.prev_error.map_or(0.0, |p| (e - p) / dt);
        self.prev_error = Some(e);
        rate
    }
}
