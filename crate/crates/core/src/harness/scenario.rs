//! Test courses: ISO 3888-1 double lane change and a low-adhesion sinusoid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::path::{LaneSection, ReferencePath};
use crate::plant::{MuField, VehicleParams, VehicleState};

const ISO_TABLE: &str = include_str!("../../data/iso3888_1.csv");

/// Overall vehicle width used to size the cones: track plus one tire width.
pub const TIRE_WIDTH: f64 = 0.5;
/// Gap between the entry lane and the side lane (m).
pub const LANE_GAP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Dlc,
    Sine,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Dlc => "dlc",
            ScenarioKind::Sine => "sine",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dlc" => Ok(ScenarioKind::Dlc),
            "sine" => Ok(ScenarioKind::Sine),
            other => Err(Error::ScenarioDomain(other.to_string())),
        }
    }
}

/// One row of the encoded lane table.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoSection {
    pub length: f64,
    pub width_factor: f64,
    pub width_offset: f64,
    pub lane: String,
}

impl IsoSection {
    /// Cone-lane width for a vehicle of width `b`; zero for transitions.
    pub fn width(&self, b: f64) -> f64 {
        self.width_factor * b + self.width_offset
    }
}

pub fn iso_sections() -> Vec<IsoSection> {
    ISO_TABLE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            IsoSection {
                length: f[1].parse().expect("iso table length"),
                width_factor: f[2].parse().expect("iso table factor"),
                width_offset: f[3].parse().expect("iso table offset"),
                lane: f[4].trim().to_string(),
            }
        })
        .collect()
}

/// Lane-centre offset of the side lane for vehicle width `b`.
pub fn dlc_offset(b: f64) -> f64 {
    let s = iso_sections();
    s[0].width(b) / 2.0 + LANE_GAP + s[2].width(b) / 2.0
}

/// Lane-centre profile starting at `x0`: entry, transition out, side lane,
/// transition back, exit.
pub fn dlc_path(x0: f64, b: f64) -> ReferencePath {
    let off = dlc_offset(b);
    let ys = [(0.0, 0.0), (0.0, off), (off, off), (off, 0.0), (0.0, 0.0)];
    let mut x = x0;
    let sections = iso_sections()
        .iter()
        .zip(ys)
        .map(|(s, (y0, y1))| {
            let sec = LaneSection {
                x0: x,
                length: s.length,
                y_start: y0,
                y_end: y1,
                width: s.width(b),
            };
            x += s.length;
            sec
        })
        .collect();
    ReferencePath::Lanes(sections)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub path: ReferencePath,
    pub v_target: f64,
    pub v_start: f64,
    /// Speed-reference ramp during launch (m/s^2).
    pub launch_accel: f64,
    pub mu: MuField,
    pub start_x: f64,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Optional overrides for [`build_scenario`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioOverrides {
    pub v_target: Option<f64>,
    pub mu: Option<MuField>,
    pub duration: Option<f64>,
    pub amplitude: Option<f64>,
    pub wavelength: Option<f64>,
    pub mu_bounds: Option<(f64, f64)>,
}

impl Scenario {
    /// Speed reference at time `t`.
    pub fn v_ref(&self, t: f64) -> f64 {
        (self.v_start + self.launch_accel * t).min(self.v_target)
    }

    /// Straight launch distance needed to reach the target speed, with margin.
    fn launch_distance(v_start: f64, v_target: f64, accel: f64) -> f64 {
        let t = (v_target - v_start) / accel;
        v_start * t + 0.5 * accel * t * t + 2.0 * v_target
    }

    pub fn initial_state(&self) -> VehicleState {
        VehicleState::at_rest_heading_x(self.start_x, self.path.y(self.start_x), self.v_start)
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.path.validate()?;
        self.mu.validate()?;
        let ok = self.v_target > 0.0
            && self.v_start > 0.0
            && self.launch_accel > 0.0
            && self.duration > 0.0
            && self.dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "scenario",
                reason: "speeds, launch ramp, duration and dt must be positive".into(),
            })
        }
    }
}

pub fn build_scenario(
    kind: ScenarioKind,
    overrides: &ScenarioOverrides,
    params: &VehicleParams,
    seed: u64,
) -> Result<Scenario> {
    let v_start = 2.0;
    let launch_accel = 1.0;
    let sc = match kind {
        ScenarioKind::Dlc => {
            let v = overrides.v_target.unwrap_or(15.0);
            let (lo, hi) = overrides.mu_bounds.unwrap_or((0.3, 0.8));
            let mu = overrides.mu.clone().unwrap_or(MuField::RandomPatch {
                lo,
                hi,
                patch: 5.0,
                seed,
            });
            let launch = Scenario::launch_distance(v_start, v, launch_accel);
            let course: f64 = iso_sections().iter().map(|s| s.length).sum();
            let t_launch = (v - v_start) / launch_accel;
            Scenario {
                kind,
                path: dlc_path(0.0, params.track + TIRE_WIDTH),
                v_target: v,
                v_start,
                launch_accel,
                mu,
                start_x: -launch,
                duration: overrides
                    .duration
                    .unwrap_or((t_launch + (2.0 * v + course + 60.0) / v).ceil()),
                dt: 0.05,
                seed,
            }
        }
        ScenarioKind::Sine => {
            let v = overrides.v_target.unwrap_or(20.0);
            let amplitude = overrides.amplitude.unwrap_or(8.0);
            let wavelength = overrides.wavelength.unwrap_or(200.0);
            let launch = Scenario::launch_distance(v_start, v, launch_accel);
            let t_launch = (v - v_start) / launch_accel;
            Scenario {
                kind,
                path: ReferencePath::Sine {
                    amplitude,
                    wavelength,
                },
                v_target: v,
                v_start,
                launch_accel,
                mu: overrides.mu.clone().unwrap_or(MuField::Uniform { mu: 0.5 }),
                start_x: -launch,
                duration: overrides
                    .duration
                    .unwrap_or((t_launch + (2.0 * v + 3.0 * wavelength) / v).ceil()),
                dt: 0.05,
                seed,
            }
        }
    };
    sc.validate()?;
    Ok(sc)
}
