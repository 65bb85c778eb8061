//! Control-affine nominal model `r_dot = f0(r) + G u` of the six-wheel
//! vehicle and the first-order linearization of the sideslip barrier rate.
//!
//! Tire stiffness enters per wheel as `c_i = C_beta F_z,i / F_z,nom`, so the
//! drift also has a load Jacobian. The control matrix keeps the fixed
//! `-4 C_beta` steering sensitivity of the six-wheel derivation.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::input::{InputVector, N_INPUTS, N_WHEELS};
use crate::plant::{LoadVector, ResponseVector, VehicleParams};

pub type ControlMatrix = SMatrix<f64, 3, N_INPUTS>;
pub type LoadJacobian = SMatrix<f64, 3, N_WHEELS>;
pub type InputRow = nalgebra::RowSVector<f64, N_INPUTS>;

/// Signed steering sensitivity of the beta channel, `C_front` in
/// `G[0,0] = C_front / (m vx)`. Two steered wheels, doubled by the
/// six-wheel lumping of the steering term.
pub fn steering_stiffness(params: &VehicleParams) -> f64 {
    -4.0 * params.c_beta
}

/// Torque-to-yaw gain `k = B / (2 Iz Rw)`.
pub fn torque_yaw_gain(params: &VehicleParams) -> f64 {
    params.track / (2.0 * params.iz * params.rw)
}

pub fn control_matrix(vx: f64, params: &VehicleParams) -> Result<ControlMatrix> {
    check_speed(vx)?;
    let c = params.c_beta;
    let l = params.a + params.b;
    let k = torque_yaw_gain(params);
    let mut g = ControlMatrix::zeros();
    g[(0, 0)] = steering_stiffness(params) / (params.m * vx);
    g[(1, 0)] = -2.0 * l * c / params.iz;
    g[(2, 0)] = -4.0 * c / params.m - 2.0 * l * c * vx / params.iz;
    for j in 0..N_WHEELS {
        // left wheels (even index) yaw the body clockwise
        let s = if j % 2 == 0 { -1.0 } else { 1.0 };
        g[(1, j + 1)] = s * k;
        g[(2, j + 1)] = s * k * vx;
    }
    Ok(g)
}

fn check_speed(vx: f64) -> Result<()> {
    if vx > 0.0 && vx.is_finite() {
        Ok(())
    } else {
        Err(Error::SpeedDomain { vx })
    }
}

/// Nominal model frozen at one forward speed and load estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalModel {
    pub params: VehicleParams,
    pub vx: f64,
    g: ControlMatrix,
    stiffness: [f64; N_WHEELS],
}

impl NominalModel {
    /// Model with every wheel at its nominal load.
    pub fn new(params: &VehicleParams, vx: f64) -> Result<Self> {
        let g = control_matrix(vx, params)?;
        Ok(Self {
            params: *params,
            vx,
            g,
            stiffness: [params.c_beta; N_WHEELS],
        })
    }

    /// Model whose per-wheel cornering stiffness scales with `fz`.
    pub fn with_loads(params: &VehicleParams, vx: f64, fz: &LoadVector) -> Result<Self> {
        let mut m = Self::new(params, vx)?;
        for (i, c) in m.stiffness.iter_mut().enumerate() {
            *c = params.c_beta * fz[i] / params.fz_nom;
        }
        Ok(m)
    }

    pub fn control_matrix(&self) -> &ControlMatrix {
        &self.g
    }

    /// Sum of per-wheel stiffness moments `(S0, S1, S2) = sum c_i x_i^p`.
    fn moments(&self) -> (f64, f64, f64) {
        let xs = self.params.wheel_x();
        let mut s = (0.0, 0.0, 0.0);
        for i in 0..N_WHEELS {
            s.0 += self.stiffness[i];
            s.1 += self.stiffness[i] * xs[i];
            s.2 += self.stiffness[i] * xs[i] * xs[i];
        }
        s
    }

    /// Sideslip decay rate `K = S0 / (m vx)`.
    pub fn sideslip_decay(&self) -> f64 {
        self.moments().0 / (self.params.m * self.vx)
    }

    /// Drift Jacobian `df0/dr`. The drift is linear in `r`, so this is exact everywhere.
    pub fn jacobian_r(&self) -> Matrix3<f64> {
        let p = &self.params;
        let vx = self.vx;
        let (s0, s1, s2) = self.moments();
        let row_b = Vector3::new(-s0 / (p.m * vx), -s1 / (p.m * vx * vx) - 1.0, 0.0);
        let row_w = Vector3::new(-s1 / p.iz, -s2 / (p.iz * vx), 0.0);
        let row_a = (-s0 * row_b - (s1 / vx) * row_w) / p.m + vx * row_w;
        Matrix3::from_rows(&[row_b.transpose(), row_w.transpose(), row_a.transpose()])
    }

    pub fn drift(&self, r: &ResponseVector) -> ResponseVector {
        self.jacobian_r() * r
    }

    pub fn response_rate(&self, r: &ResponseVector, u: &InputVector) -> ResponseVector {
        self.drift(r) + self.g * u
    }

    /// Drift Jacobian with respect to the six wheel loads.
    pub fn jacobian_f(&self, r: &ResponseVector) -> LoadJacobian {
        let p = &self.params;
        let vx = self.vx;
        let (s0, s1, _) = self.moments();
        let f0 = self.drift(r);
        let xs = p.wheel_x();
        let dc = p.c_beta / p.fz_nom;
        let (beta, omega) = (r[0], r[1]);
        LoadJacobian::from_fn(|row, i| {
            let x = xs[i];
            let db = (-beta - x * omega / vx) / (p.m * vx);
            let dw = (-x * beta - x * x * omega / vx) / p.iz;
            let d = match row {
                0 => db,
                1 => dw,
                _ => (-f0[0] - s0 * db - (x / vx) * f0[1] - (s1 / vx) * dw) / p.m + vx * dw,
            };
            d * dc
        })
    }
}

/// Drift at zero input with all wheels at nominal load.
pub fn nominal_drift(r: &ResponseVector, vx: f64, params: &VehicleParams) -> Result<ResponseVector> {
    Ok(NominalModel::new(params, vx)?.drift(r))
}

/// `h_dot ~ L_h u + b_h` and its gradients with respect to the response.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierLinearization {
    pub lh: InputRow,
    pub bh: f64,
    /// Column `j` is the gradient of `L_h[j]` with respect to `r`.
    pub grad_lh: ControlMatrix,
    pub grad_bh: Vector3<f64>,
}

impl BarrierLinearization {
    pub fn rate(&self, u: &InputVector) -> f64 {
        (self.lh * u)[0] + self.bh
    }
}

/// Linearize `h_dot` for `h = w^2 beta_lim^2 - beta^2` with gradient
/// `[-2 w^2 beta, 0, 0]`, using the beta row of the nominal model.
pub fn linearize_barrier(r: &ResponseVector, w: f64, model: &NominalModel) -> BarrierLinearization {
    let w2 = w * w;
    let beta = r[0];
    let g0 = model.control_matrix().row(0).into_owned();
    let jb = model.jacobian_r().row(0).transpose();
    let f0b = jb.dot(r);

    let lh = -2.0 * w2 * beta * g0;
    let bh = -2.0 * w2 * beta * f0b;
    let mut grad_lh = ControlMatrix::zeros();
    grad_lh.set_row(0, &(-2.0 * w2 * g0));
    // d/dr of -2 w^2 beta (jb . r)
    let grad_bh = -2.0 * w2 * (beta * jb + Vector3::new(f0b, 0.0, 0.0));
    BarrierLinearization {
        lh,
        bh,
        grad_lh,
        grad_bh,
    }
}

/// Gradient of `h` with respect to the response, as used by the linearization.
pub fn barrier_response_gradient(r: &ResponseVector, w: f64) -> Vector3<f64> {
    Vector3::new(-2.0 * w * w * r[0], 0.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn control_matrix_entries() {
        let p = params();
        let g = control_matrix(15.0, &p).unwrap();
        assert!((g[(0, 0)] - (-4.0 * 1.728e6 / (45_000.0 * 15.0))).abs() < 1e-12);
        assert!((g[(0, 0)] + 10.24).abs() < 1e-9);
        let k: f64 = 4.147 / (2.0 * 3_446_811.0 * 0.8);
        assert!((k - 7.52e-7).abs() < 1e-9);
        for j in 1..N_INPUTS {
            assert_eq!(g[(0, j)], 0.0);
            let s = if j % 2 == 1 { -1.0 } else { 1.0 };
            assert!((g[(1, j)] - s * k).abs() < 1e-18);
            assert!((g[(2, j)] - s * k * 15.0).abs() < 1e-15);
        }
        assert!((g[(1, 0)] + 2.0 * 6.31 * 1.728e6 / 3_446_811.0).abs() < 1e-9);
        assert!(
            (g[(2, 0)] - (-4.0 * 1.728e6 / 45_000.0 - 2.0 * 6.31 * 1.728e6 * 15.0 / 3_446_811.0))
                .abs()
                < 1e-9
        );
        assert!(matches!(control_matrix(0.0, &p), Err(Error::SpeedDomain { .. })));
        assert!(matches!(control_matrix(-1.0, &p), Err(Error::SpeedDomain { .. })));
    }

    #[test]
    fn drift_examples() {
        let p = params();
        let z = nominal_drift(&ResponseVector::zeros(), 15.0, &p).unwrap();
        assert_eq!(z, ResponseVector::zeros());
        let d = nominal_drift(&ResponseVector::new(0.0, 0.1, 0.0), 15.0, &p).unwrap();
        // a = b, so the omega term in the beta row vanishes
        assert!((d[0] + 0.1).abs() < 1e-12);
        let r = ResponseVector::new(0.02, 0.0, 0.0);
        let d = nominal_drift(&r, 15.0, &p).unwrap();
        let k = 6.0 * p.c_beta / (p.m * 15.0);
        assert!((d[0] + k * 0.02).abs() < 1e-12);
    }

    fn fd_jacobian_r(m: &NominalModel, r: &ResponseVector) -> Matrix3<f64> {
        let h = 1e-6;
        Matrix3::from_fn(|i, j| {
            let mut rp = *r;
            let mut rm = *r;
            rp[j] += h;
            rm[j] -= h;
            (m.drift(&rp)[i] - m.drift(&rm)[i]) / (2.0 * h)
        })
    }

    #[test]
    fn drift_jacobian_matches_finite_differences() {
        let p = params();
        let r = ResponseVector::new(0.01, 0.05, 0.5);
        for vx in [5.0, 15.0, 20.0] {
            let m = NominalModel::new(&p, vx).unwrap();
            let err = (m.jacobian_r() - fd_jacobian_r(&m, &r)).abs().max();
            // entries reach ~1e3, so the absolute FD error is relative to that scale
            assert!(err < 1e-6 * m.jacobian_r().abs().max().max(1.0), "vx {vx}: {err}");
        }
        // asymmetric geometry exercises every term
        let mut q = p;
        q.a = 3.6;
        q.b = 2.7;
        let loads = LoadVector::from_fn(|i, _| 60_000.0 + 5_000.0 * i as f64);
        let m = NominalModel::with_loads(&q, 12.0, &loads).unwrap();
        let err = (m.jacobian_r() - fd_jacobian_r(&m, &r)).abs().max();
        assert!(err < 1e-6 * m.jacobian_r().abs().max());
    }

    #[test]
    fn load_jacobian_matches_finite_differences() {
        let mut q = params();
        q.a = 3.6;
        q.b = 2.7;
        let loads = LoadVector::from_fn(|i, _| 60_000.0 + 5_000.0 * i as f64);
        let r = ResponseVector::new(0.03, -0.08, 1.2);
        let m = NominalModel::with_loads(&q, 12.0, &loads).unwrap();
        let j = m.jacobian_f(&r);
        let h = 1.0;
        for i in 0..N_WHEELS {
            let mut lp = loads;
            let mut lm = loads;
            lp[i] += h;
            lm[i] -= h;
            let fp = NominalModel::with_loads(&q, 12.0, &lp).unwrap().drift(&r);
            let fm = NominalModel::with_loads(&q, 12.0, &lm).unwrap().drift(&r);
            let fd = (fp - fm) / (2.0 * h);
            for row in 0..3 {
                let scale = j.column(i).abs().max().max(1e-12);
                assert!((fd[row] - j[(row, i)]).abs() < 1e-6 * scale, "({row},{i})");
            }
        }
    }

    #[test]
    fn linearization_zero_at_center() {
        let m = NominalModel::new(&params(), 15.0).unwrap();
        let lin = linearize_barrier(&ResponseVector::new(0.0, 0.07, 1.0), 1.0, &m);
        assert!(lin.lh.iter().all(|v| *v == 0.0));
        assert_eq!(lin.bh, 0.0);
        // grad b_h at beta = 0 is [2 w^2 omega, 0, 0]; zero only with omega = 0 too
        let lin0 = linearize_barrier(&ResponseVector::zeros(), 1.0, &m);
        assert_eq!(lin0.grad_bh, Vector3::zeros());
    }

    #[test]
    fn grad_bh_middle_entry() {
        let m = NominalModel::new(&params(), 15.0).unwrap();
        for (beta, w) in [(0.05, 1.0), (-0.02, 0.8), (0.11, 1.2)] {
            let lin = linearize_barrier(&ResponseVector::new(beta, 0.03, 0.4), w, &m);
            // magnitude 2 w^2 beta; the sign is that of the true derivative
            assert!((lin.grad_bh[1] - 2.0 * w * w * beta).abs() < 1e-15);
            assert_eq!(lin.grad_bh[2], 0.0);
        }
    }

    fn hdot(r: &ResponseVector, u: &InputVector, w: f64, m: &NominalModel) -> f64 {
        barrier_response_gradient(r, w).dot(&m.response_rate(r, u))
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let m = NominalModel::new(&params(), 15.0).unwrap();
        let r = ResponseVector::new(0.04, 0.06, 0.9);
        let w = 0.9;
        let lin = linearize_barrier(&r, w, &m);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);

        // L_h and b_h from derivatives of h_dot in u and its value at u = 0
        let hu = 1e-6;
        for j in 0..N_INPUTS {
            let mut up = InputVector::zeros();
            let mut um = InputVector::zeros();
            up[j] = hu;
            um[j] = -hu;
            let fd = (hdot(&r, &up, w, &m) - hdot(&r, &um, w, &m)) / (2.0 * hu);
            if lin.lh[j] != 0.0 {
                assert!(rel(fd, lin.lh[j]) < 1e-4, "L_h[{j}]");
            } else {
                assert!(fd.abs() < 1e-12);
            }
        }
        assert!(rel(hdot(&r, &InputVector::zeros(), w, &m), lin.bh) < 1e-10);

        let h = 1e-6;
        for k in 0..3 {
            let mut rp = r;
            let mut rm = r;
            rp[k] += h;
            rm[k] -= h;
            let lp = linearize_barrier(&rp, w, &m);
            let lm = linearize_barrier(&rm, w, &m);
            let fd_b = (lp.bh - lm.bh) / (2.0 * h);
            if lin.grad_bh[k] != 0.0 {
                assert!(rel(fd_b, lin.grad_bh[k]) < 1e-4, "grad_bh[{k}]");
            } else {
                assert!(fd_b.abs() < 1e-9);
            }
            let fd_l = (lp.lh - lm.lh) / (2.0 * h);
            for j in 0..N_INPUTS {
                if lin.grad_lh[(k, j)] != 0.0 {
                    assert!(rel(fd_l[j], lin.grad_lh[(k, j)]) < 1e-4);
                } else {
                    assert!(fd_l[j].abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn steering_sign_structure() {
        let p = params();
        let m = NominalModel::new(&p, 15.0).unwrap();
        let lin = linearize_barrier(&ResponseVector::new(0.05, 0.0, 0.0), 1.0, &m);
        assert_eq!(lin.lh[0].signum(), -steering_stiffness(&p).signum());
    }

    proptest! {
        #[test]
        fn consistency_with_projected_dynamics(
            beta in -0.15f64..0.15,
            omega in -0.2f64..0.2,
            ay in -5.0f64..5.0,
            w in 0.5f64..1.5,
            vx in 3.0f64..25.0,
            d in -0.5f64..0.5,
            t in proptest::collection::vec(-1.35e5f64..1.35e5, 6),
        ) {
            let m = NominalModel::new(&params(), vx).unwrap();
            let r = ResponseVector::new(beta, omega, ay);
            let mut u = InputVector::zeros();
            u[0] = d;
            for i in 0..6 { u[i + 1] = t[i]; }
            let lin = linearize_barrier(&r, w, &m);
            let direct = hdot(&r, &u, w, &m);
            prop_assert!((lin.rate(&u) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
        }

        #[test]
        fn w_homogeneity(beta in -0.15f64..0.15, omega in -0.2f64..0.2, w in 0.3f64..1.5) {
            let m = NominalModel::new(&params(), 15.0).unwrap();
            let r = ResponseVector::new(beta, omega, 0.0);
            let a = linearize_barrier(&r, w, &m);
            let b = linearize_barrier(&r, 2.0 * w, &m);
            prop_assert!((b.lh - 4.0 * a.lh).abs().max() <= 1e-12 * a.lh.abs().max().max(1e-300));
            prop_assert!((b.bh - 4.0 * a.bh).abs() <= 1e-12 * a.bh.abs().max(1e-300));
            prop_assert!((b.grad_lh - 4.0 * a.grad_lh).abs().max() <= 1e-12 * a.grad_lh.abs().max());
            prop_assert!((b.grad_bh - 4.0 * a.grad_bh).abs().max() <= 1e-12 * a.grad_bh.abs().max().max(1e-300));
        }
    }
}
