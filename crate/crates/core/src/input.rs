//! Control input `u = [delta, T_1..T_6]` and the actuator envelope it lives in.
//!
//! Sign convention: `delta > 0` steers right (front road-wheel angle `-delta`
//! in the y-left body frame). Torque order is `[L1, R1, L2, R2, L3, R3]`.

use nalgebra::SVector;

pub const N_WHEELS: usize = 6;
pub const N_INPUTS: usize = 7;

pub type InputVector = SVector<f64, N_INPUTS>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// Steering angle (rad).
    pub delta: f64,
    /// Wheel torques (N m).
    pub torques: [f64; N_WHEELS],
}

impl ControlInput {
    pub fn new(delta: f64, torques: [f64; N_WHEELS]) -> Self {
        Self { delta, torques }
    }

    pub fn uniform(delta: f64, torque: f64) -> Self {
        Self::new(delta, [torque; N_WHEELS])
    }

    pub fn to_vector(&self) -> InputVector {
        let mut v = InputVector::zeros();
        v[0] = self.delta;
        for (i, t) in self.torques.iter().enumerate() {
            v[i + 1] = *t;
        }
        v
    }

    pub fn from_vector(v: &InputVector) -> Self {
        let mut torques = [0.0; N_WHEELS];
        for (i, t) in torques.iter_mut().enumerate() {
            *t = v[i + 1];
        }
        Self { delta: v[0], torques }
    }

    pub fn total_torque(&self) -> f64 {
        self.torques.iter().sum()
    }
}

/// Box and rate limits on every input channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorLimits {
    /// |delta| bound (rad).
    pub delta_max: f64,
    /// |d delta / dt| bound (rad/s).
    pub delta_rate_max: f64,
    /// |T_i| bound (N m).
    pub torque_max: f64,
    /// |dT_i / dt| bound (N m / s).
    pub torque_rate_max: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            delta_max: 30f64.to_radians(),
            delta_rate_max: 6f64.to_radians(),
            torque_max: 135_000.0,
            torque_rate_max: 5_000.0,
        }
    }
}

impl ActuatorLimits {
    pub fn box_lower(&self) -> InputVector {
        -self.box_upper()
    }

    pub fn box_upper(&self) -> InputVector {
        let mut v = InputVector::from_element(self.torque_max);
        v[0] = self.delta_max;
        v
    }

    fn rate_step(&self, dt: f64) -> InputVector {
        let mut v = InputVector::from_element(self.torque_rate_max * dt);
        v[0] = self.delta_rate_max * dt;
        v
    }

    /// Per-channel feasible interval for the next input given the previous one.
    pub fn bounds(&self, prev: &ControlInput, dt: f64) -> (InputVector, InputVector) {
        let p = prev.to_vector();
        let step = self.rate_step(dt);
        let lo = self.box_lower();
        let hi = self.box_upper();
        let mut lower = InputVector::zeros();
        let mut upper = InputVector::zeros();
        for i in 0..N_INPUTS {
            lower[i] = lo[i].max(p[i] - step[i]);
            upper[i] = hi[i].min(p[i] + step[i]);
            if lower[i] > upper[i] {
                // previous input outside the box: move toward it at the rate limit
                let target = p[i].clamp(lo[i], hi[i]);
                let v = if target > p[i] { p[i] + step[i] } else { p[i] - step[i] };
                lower[i] = v;
                upper[i] = v;
            }
        }
        (lower, upper)
    }

    pub fn clamp(&self, u: &ControlInput, prev: &ControlInput, dt: f64) -> ControlInput {
        let (lo, hi) = self.bounds(prev, dt);
        let v = u.to_vector();
        ControlInput::from_vector(&InputVector::from_fn(|i, _| v[i].clamp(lo[i], hi[i])))
    }

    /// Largest violation of the box/rate envelope, 0 when `u` is admissible.
    pub fn violation(&self, u: &ControlInput, prev: &ControlInput, dt: f64) -> f64 {
        let (lo, hi) = self.bounds(prev, dt);
        let v = u.to_vector();
        (0..N_INPUTS)
            .map(|i| (lo[i] - v[i]).max(v[i] - hi[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// `||u_max - u_min||_inf`.
    pub fn span_inf(&self) -> f64 {
        (2.0 * self.delta_max).max(2.0 * self.torque_max)
    }
}
