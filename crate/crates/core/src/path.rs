//! Reference paths given as graphs `y = f(x)` over the global x axis.

use crate::error::{Error, Result};

/// One lane segment of a piecewise lane-change profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneSection {
    /// Section start (m).
    pub x0: f64,
    /// Section length (m).
    pub length: f64,
    /// Lateral position at entry and exit (m); a half-cosine joins them.
    pub y_start: f64,
    pub y_end: f64,
    /// Lane width (m); zero for transition sections without cones.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferencePath {
    Straight,
    /// `y = A sin(2 pi x / lambda)` for `x >= 0`, straight before.
    Sine { amplitude: f64, wavelength: f64 },
    /// Piecewise half-cosine transitions between constant-offset lanes.
    Lanes(Vec<LaneSection>),
}

/// Closest point on the path and the signed offset from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub curvature: f64,
    /// Lateral offset of the query point, positive to the left of the path.
    pub e_y: f64,
}

impl ReferencePath {
    pub fn validate(&self) -> Result<()> {
        match self {
            ReferencePath::Lanes(s) if s.is_empty() => Err(Error::PathDomain),
            ReferencePath::Lanes(s) if s.iter().any(|l| !(l.length > 0.0)) => {
                Err(Error::PathDomain)
            }
            ReferencePath::Sine { wavelength, .. } if !(*wavelength > 0.0) => {
                Err(Error::PathDomain)
            }
            _ => Ok(()),
        }
    }

    /// `(f, f', f'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        use std::f64::consts::PI;
        match self {
            ReferencePath::Straight => (0.0, 0.0, 0.0),
            ReferencePath::Sine {
                amplitude,
                wavelength,
            } => {
                if x < 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let k = 2.0 * PI / wavelength;
                let (s, c) = (k * x).sin_cos();
                (amplitude * s, amplitude * k * c, -amplitude * k * k * s)
            }
            ReferencePath::Lanes(sections) => {
                let first = sections[0];
                if x < first.x0 {
                    return (first.y_start, 0.0, 0.0);
                }
                for sec in sections {
                    if x < sec.x0 + sec.length {
                        let d = sec.y_end - sec.y_start;
                        let k = PI / sec.length;
                        let (s, c) = (k * (x - sec.x0)).sin_cos();
                        return (
                            sec.y_start + 0.5 * d * (1.0 - c),
                            0.5 * d * k * s,
                            0.5 * d * k * k * c,
                        );
                    }
                }
                (sections[sections.len() - 1].y_end, 0.0, 0.0)
            }
        }
    }

    pub fn y(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// Project a point onto the path by Newton iteration on the graph parameter.
    pub fn project(&self, px: f64, py: f64) -> PathPoint {
        let mut x = px;
        for _ in 0..20 {
            let (f, d1, d2) = self.eval(x);
            let grad = (x - px) + (f - py) * d1;
            let hess = 1.0 + d1 * d1 + (f - py) * d2;
            let step = if hess > 1e-6 { grad / hess } else { grad };
            x -= step.clamp(-5.0, 5.0);
            if step.abs() < 1e-10 {
                break;
            }
        }
        let (f, d1, d2) = self.eval(x);
        let norm = (1.0 + d1 * d1).sqrt();
        let e_y = (-(px - x) * d1 + (py - f)) / norm;
        PathPoint {
            x,
            y: f,
            heading: d1.atan(),
            curvature: d2 / norm.powi(3),
            e_y,
        }
    }

    /// Largest absolute curvature sampled over `[x0, x1]`.
    pub fn max_curvature(&self, x0: f64, x1: f64) -> f64 {
        let n = 4000;
        (0..=n)
            .map(|i| {
                let x = x0 + (x1 - x0) * i as f64 / n as f64;
                let (_, d1, d2) = self.eval(x);
                (d2 / (1.0 + d1 * d1).powf(1.5)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut v = (a + PI).rem_euclid(2.0 * PI) - PI;
    if v <= -PI {
        v += 2.0 * PI;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine() -> ReferencePath {
        ReferencePath::Sine {
            amplitude: 8.0,
            wavelength: 200.0,
        }
    }

    #[test]
    fn sine_values() {
        let p = sine();
        assert!((p.y(50.0) - 8.0).abs() < 1e-12);
        assert!(p.y(100.0).abs() < 1e-12);
        assert_eq!(p.y(-10.0), 0.0);
    }

    #[test]
    fn projection_sign_and_distance() {
        let p = sine();
        // above the crest: left of a path heading +x
        let q = p.project(50.0, 9.0);
        assert!((q.x - 50.0).abs() < 1e-6);
        assert!((q.e_y - 1.0).abs() < 1e-6);
        let q = p.project(50.0, 7.5);
        assert!((q.e_y + 0.5).abs() < 1e-6);
        // closest point is orthogonal to the tangent
        let q = p.project(20.0, 3.0);
        let (_, d1, _) = p.eval(q.x);
        let dot = (20.0 - q.x) + (3.0 - q.y) * d1;
        assert!(dot.abs() < 1e-8);
        assert!(q.curvature < 0.0 || q.y < 0.0 || q.x > 100.0);
    }

    #[test]
    fn lanes_are_continuous() {
        let p = ReferencePath::Lanes(vec![
            LaneSection {
                x0: 0.0,
                length: 15.0,
                y_start: 0.0,
                y_end: 0.0,
                width: 5.0,
            },
            LaneSection {
                x0: 15.0,
                length: 30.0,
                y_start: 0.0,
                y_end: 6.0,
                width: 0.0,
            },
            LaneSection {
                x0: 45.0,
                length: 25.0,
                y_start: 6.0,
                y_end: 6.0,
                width: 5.0,
            },
        ]);
        for x in [15.0, 45.0] {
            let a = p.eval(x - 1e-9);
            let b = p.eval(x + 1e-9);
            assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
        }
        assert_eq!(p.y(100.0), 6.0);
        assert!((p.y(30.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn wrap() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.1) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_lanes_rejected() {
        assert_eq!(ReferencePath::Lanes(vec![]).validate(), Err(Error::PathDomain));
    }
}
