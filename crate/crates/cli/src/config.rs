//! Flat `key = value` run configuration.
//!
//! Grammar: one `key = value` per line, `#` starts a comment, blank lines are
//! ignored, keys are dotted (`section.name`) and may appear at most once.
//! Every key a file omits takes its value from the bundled defaults fixture.
//! Keys ending in `_deg` / `_deg_s` are degrees and are converted to radians.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Vector3;
use r2cbf::bayes::{iw_init, ResidualTransform};
use r2cbf::controller::robust::ErrorBound;
use r2cbf::controller::{ControllerKind, SafetyConfig, Variant};
use r2cbf::cvar::{kappa, RiskLevel};
use r2cbf::harness::metrics::MetricLimits;
use r2cbf::harness::run::RunSpec;
use r2cbf::harness::scenario::{ScenarioKind, ScenarioOverrides};
use r2cbf::plant::{
    MuField, SensorNoiseSpec, VehicleParams, ROLL_CALIBRATION_AY, ROLL_CALIBRATION_DEG,
};
use r2cbf::uncertainty::{BarrierMode, LoadCovariance};
use sha2::{Digest, Sha256};

pub const DEFAULTS: &str = include_str!("../data/defaults.conf");

/// Allowed gap between a supplied kappa and the value implied by beta_risk.
pub const KAPPA_TOLERANCE: f64 = 1e-3;
/// Normalized noise bounds: response in [0.05, 0.20], load in [0.08, 0.15].
pub const RHO_R_BOUNDS: (f64, f64) = (0.05, 0.20);
pub const RHO_F_BOUNDS: (f64, f64) = (0.08, 0.15);

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// `None` when the offending value came from the defaults.
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) if self.key.is_empty() => write!(f, "line {l}: {}", self.message),
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None if self.key.is_empty() => write!(f, "{}", self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct SineSettings {
    pub speed: f64,
    pub amplitude: f64,
    pub wavelength: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlcSettings {
    pub speed: f64,
    pub mu_low: f64,
    pub mu_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub duration: Option<f64>,
    pub sine: SineSettings,
    pub dlc: DlcSettings,
    pub controller: ControllerKind,
    pub variant: Variant,
    pub params: VehicleParams,
    pub noise: SensorNoiseSpec,
    pub limits: MetricLimits,
    pub safety: SafetyConfig,
    pub beta_risk: f64,
    pub seed: u64,
    pub seeds: u64,
    /// Hex SHA-256 of the resolved configuration, seeds excluded.
    pub hash: String,
    /// Non-fatal findings, e.g. noise below the lower normalized bound.
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn overrides(&self, kind: ScenarioKind) -> ScenarioOverrides {
        match kind {
            ScenarioKind::Sine => ScenarioOverrides {
                v_target: Some(self.sine.speed),
                mu: Some(MuField::Uniform { mu: self.sine.mu }),
                duration: self.duration,
                amplitude: Some(self.sine.amplitude),
                wavelength: Some(self.sine.wavelength),
                mu_bounds: None,
            },
            ScenarioKind::Dlc => ScenarioOverrides {
                v_target: Some(self.dlc.speed),
                duration: self.duration,
                mu_bounds: Some((self.dlc.mu_low, self.dlc.mu_high)),
                ..Default::default()
            },
        }
    }

    pub fn run_spec(&self, kind: ControllerKind, variant: Variant) -> RunSpec {
        RunSpec {
            kind,
            variant,
            safety: self.safety.clone(),
            params: self.params,
            noise: self.noise,
            limits: self.limits,
            config_hash: self.hash.clone(),
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seed..self.seed + self.seeds).collect()
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: Option<usize>,
}

fn parse_lines(text: &str, from_user: bool) -> Result<BTreeMap<String, Entry>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError {
                line: Some(n),
                key: String::new(),
                message: "expected `key = value`".into(),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError {
                line: Some(n),
                key: k.to_string(),
                message: "empty key or value".into(),
            });
        }
        let entry = Entry {
            value: v.to_string(),
            line: from_user.then_some(n),
        };
        if map.insert(k.to_string(), entry).is_some() {
            return Err(ConfigError {
                line: Some(n),
                key: k.to_string(),
                message: "duplicate key".into(),
            });
        }
    }
    Ok(map)
}

struct Reader {
    map: BTreeMap<String, Entry>,
}

impl Reader {
    fn entry(&self, key: &str) -> &Entry {
        // every key the reader asks for is present in the defaults fixture
        self.map.get(key).unwrap_or_else(|| panic!("defaults fixture lacks {key}"))
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.map.get(key).and_then(|e| e.line),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn raw(&self, key: &str) -> &str {
        &self.entry(key).value
    }

    fn num(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self
            .raw(key)
            .parse()
            .map_err(|_| self.err(key, format!("`{}` is not a number", self.raw(key))))?;
        if !v.is_finite() {
            return Err(self.err(key, "must be finite"));
        }
        Ok(if key.ends_with("_deg") || key.ends_with("_deg_s") {
            v.to_radians()
        } else {
            v
        })
    }

    fn positive(&self, key: &str) -> Result<f64, ConfigError> {
        let v = self.num(key)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.err(key, format!("must be positive, got {}", self.raw(key))))
        }
    }

    fn nonneg(&self, key: &str) -> Result<f64, ConfigError> {
        let v = self.num(key)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(self.err(key, format!("must be nonnegative, got {}", self.raw(key))))
        }
    }

    fn int(&self, key: &str) -> Result<u64, ConfigError> {
        self.raw(key)
            .parse()
            .map_err(|_| self.err(key, format!("`{}` is not a nonnegative integer", self.raw(key))))
    }

    fn optional(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.positive(key).map(Some)
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key).parse().map_err(|e: T::Err| self.err(key, e.to_string()))
    }

    /// Sorted `key = value` with numbers in shortest round-trip form.
    fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, e) in &self.map {
            if k.starts_with("run.") {
                continue;
            }
            let v = match e.value.parse::<f64>() {
                Ok(x) => format!("{x:?}"),
                Err(_) => e.value.clone(),
            };
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

fn wrap(r: &Reader, key: &str, res: r2cbf::Result<()>) -> Result<(), ConfigError> {
    res.map_err(|e| r.err(key, e.to_string()))
}

/// Parse and validate a configuration file; omitted keys take default values.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut map = parse_lines(DEFAULTS, false).expect("defaults fixture parses");
    for (k, e) in parse_lines(text, true)? {
        if !map.contains_key(&k) {
            return Err(ConfigError {
                line: e.line,
                key: k,
                message: "unknown key".into(),
            });
        }
        map.insert(k, e);
    }
    let r = Reader { map };
    let mut warnings = Vec::new();

    let limits_act = r2cbf::input::ActuatorLimits {
        delta_max: r.positive("vehicle.delta_max_deg")?,
        delta_rate_max: r.positive("vehicle.delta_rate_deg_s")?,
        torque_max: r.positive("vehicle.torque_max")?,
        torque_rate_max: r.positive("vehicle.torque_rate")?,
    };
    let mut params = VehicleParams {
        m: r.positive("vehicle.m")?,
        iz: r.positive("vehicle.iz")?,
        a: r.positive("vehicle.a")?,
        b: r.positive("vehicle.b")?,
        track: r.positive("vehicle.track")?,
        c_beta: r.positive("vehicle.c_beta")?,
        rw: r.positive("vehicle.rw")?,
        fz_nom: r.positive("vehicle.fz_nom")?,
        h_cog: r.positive("vehicle.h_cog")?,
        c_drag: r.nonneg("vehicle.c_drag")?,
        limits: limits_act,
        ..VehicleParams::default()
    };
    params.k_roll = params.m * params.h_cog * ROLL_CALIBRATION_AY / ROLL_CALIBRATION_DEG.to_radians();
    wrap(&r, "vehicle.m", params.validate())?;

    let limits = MetricLimits {
        beta: r.positive("limits.beta_lim_deg")?,
        omega: r.positive("limits.omega_lim_deg_s")?,
        ay: r.positive("limits.ay_lim")?,
        phi: r.positive("limits.phi_lim_deg")?,
    };

    let noise = SensorNoiseSpec {
        sigma_beta: r.nonneg("noise.sigma_beta_deg")?,
        sigma_omega: r.nonneg("noise.sigma_omega_deg_s")?,
        sigma_ay: r.nonneg("noise.sigma_ay")?,
        sigma_fz: r.nonneg("noise.sigma_fz")?,
        seed: r.int("noise.seed")?,
    };
    let rho_r = noise.rho_r(limits.beta, limits.omega);
    if rho_r > RHO_R_BOUNDS.1 {
        let key = if noise.sigma_beta / limits.beta >= noise.sigma_omega / limits.omega {
            "noise.sigma_beta_deg"
        } else {
            "noise.sigma_omega_deg_s"
        };
        return Err(r.err(
            key,
            format!("normalized response noise {rho_r:.3} exceeds the Constraint 2 bound rho_r <= 0.20"),
        ));
    }
    if rho_r < RHO_R_BOUNDS.0 {
        warnings.push(format!("normalized response noise {rho_r:.3} is below the Constraint 2 range [0.05, 0.20]"));
    }
    let rho_f = noise.rho_f(params.fz_nom);
    if rho_f > RHO_F_BOUNDS.1 {
        return Err(r.err(
            "noise.sigma_fz",
            format!("normalized load noise {rho_f:.3} exceeds the Constraint 2 bound rho_F <= 0.15"),
        ));
    }
    if rho_f < RHO_F_BOUNDS.0 {
        warnings.push(format!("normalized load noise {rho_f:.3} is below the Constraint 2 range [0.08, 0.15]"));
    }

    let beta_risk = r.num("r2cbf.beta_risk")?;
    let level = RiskLevel::new(beta_risk).map_err(|e| r.err("r2cbf.beta_risk", e.to_string()))?;
    let k_implied = kappa(level);
    let k = match r.raw("r2cbf.kappa") {
        "auto" => k_implied,
        _ => {
            let given = r.positive("r2cbf.kappa")?;
            if (given - k_implied).abs() > KAPPA_TOLERANCE {
                return Err(r.err(
                    "r2cbf.kappa",
                    format!("{given} disagrees with kappa(beta_risk = {beta_risk}) = {k_implied:.6}"),
                ));
            }
            given
        }
    };

    let mode = match r.raw("r2cbf.barrier_mode") {
        "instantaneous" => BarrierMode::Instantaneous,
        "predictive" => BarrierMode::Predictive {
            t_pred: r.positive("r2cbf.t_pred")?,
        },
        other => return Err(r.err("r2cbf.barrier_mode", format!("unknown mode `{other}`"))),
    };
    let transform = match r.raw("r2cbf.residual") {
        "transformed" => ResidualTransform::Transformed,
        "raw" => ResidualTransform::Raw,
        other => return Err(r.err("r2cbf.residual", format!("unknown residual `{other}`"))),
    };

    let defaults = SafetyConfig::default();
    let mut safety = SafetyConfig {
        mode,
        kappa: k,
        transform,
        ..defaults.clone()
    };
    safety.barrier.beta_lim = limits.beta;
    safety.barrier.gamma = r.num("r2cbf.gamma_w")?;
    safety.barrier.fz_nom = params.fz_nom;
    wrap(&r, "r2cbf.gamma_w", safety.barrier.validate())?;
    safety.filter.k_alpha = r.positive("r2cbf.k_alpha")?;
    safety.filter.q_steer = r.positive("r2cbf.q_steer")?;
    safety.filter.q_torque = r.positive("r2cbf.q_torque")?;
    safety.filter.rho = r.positive("r2cbf.rho")?;
    safety.filter.limits = params.limits;
    safety.gains.k_stanley = r.positive("tracking.k_stanley")?;
    safety.gains.k_p = r.nonneg("tracking.k_p")?;
    safety.gains.k_d = r.nonneg("tracking.k_d")?;
    safety.prior_variances = Vector3::new(
        r.positive("r2cbf.prior_sigma_beta_deg")?.powi(2),
        r.positive("r2cbf.prior_sigma_omega_deg_s")?.powi(2),
        r.positive("r2cbf.prior_sigma_ay")?.powi(2),
    );
    safety.nu0 = r.num("r2cbf.nu0")?;
    safety.forgetting = r.num("r2cbf.lambda")?;
    if let Err(e) = iw_init(&safety.prior_variances, Some(safety.nu0), safety.forgetting) {
        let key = match e {
            r2cbf::Error::DofDomain { .. } => "r2cbf.nu0",
            r2cbf::Error::InvalidParameter { name: "lambda", .. } => "r2cbf.lambda",
            _ => "r2cbf.prior_sigma_beta_deg",
        };
        return Err(r.err(key, e.to_string()));
    }
    safety.load_covariance = LoadCovariance::from_diagonal_element(r.nonneg("r2cbf.sigma_load")?.powi(2));
    safety.estimator_gain = Vector3::repeat(r.positive("robust.lambda")?);
    safety.error_bound = ErrorBound {
        e0: r.nonneg("robust.e0")?,
        decay: r.positive("robust.decay")?,
        e_inf: r.nonneg("robust.e_inf")?,
    };

    let sine = SineSettings {
        speed: r.positive("scenario.sine.speed")?,
        amplitude: r.nonneg("scenario.sine.amplitude")?,
        wavelength: r.positive("scenario.sine.wavelength")?,
        mu: r.positive("scenario.sine.mu")?,
    };
    let dlc = DlcSettings {
        speed: r.positive("scenario.dlc.speed")?,
        mu_low: r.positive("scenario.dlc.mu_low")?,
        mu_high: r.positive("scenario.dlc.mu_high")?,
    };
    if dlc.mu_low > dlc.mu_high {
        return Err(r.err("scenario.dlc.mu_low", "must not exceed scenario.dlc.mu_high"));
    }
    for (key, v) in [
        ("scenario.sine.speed", sine.speed),
        ("scenario.dlc.speed", dlc.speed),
    ] {
        if v <= 2.0 {
            return Err(r.err(key, "target speed must exceed the 2 m/s rolling start"));
        }
    }

    let seeds = r.int("run.seeds")?;
    if seeds == 0 {
        return Err(r.err("run.seeds", "at least one seed is required"));
    }

    let hash = hex::encode(Sha256::digest(r.canonical().as_bytes()));
    Ok(RunConfig {
        scenario: r.parsed("scenario.kind")?,
        duration: r.optional("scenario.duration")?,
        sine,
        dlc,
        controller: r.parsed("controller.kind")?,
        variant: r.parsed("controller.variant")?,
        params,
        noise,
        limits,
        safety,
        beta_risk,
        seed: r.int("run.seed")?,
        seeds,
        hash,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_equals_defaults_fixture() {
        assert_eq!(parse_config("").unwrap(), parse_config(DEFAULTS).unwrap());
    }

    #[test]
    fn defaults_match_library_defaults() {
        let c = parse_config("").unwrap();
        let lib = SafetyConfig::default();
        assert!((c.safety.barrier.beta_lim - lib.barrier.beta_lim).abs() < 1e-12);
        assert!((c.limits.omega - MetricLimits::default().omega).abs() < 1e-12);
        assert!((c.safety.kappa - lib.kappa).abs() < 1e-15);
        assert_eq!(c.params.limits, VehicleParams::default().limits);
        assert_eq!(c.params.k_roll, VehicleParams::default().k_roll);
        assert_eq!(c.noise, SensorNoiseSpec::default());
        assert_eq!(c.safety.gains, lib.gains);
        assert_eq!(c.safety.filter, lib.filter);
        assert!((c.safety.prior_variances - lib.prior_variances).norm() < 1e-18);
    }

    #[test]
    fn kappa_auto_near_table_value() {
        let c = parse_config("").unwrap();
        assert!((c.safety.kappa - 2.06).abs() < 1e-2);
        assert!((c.safety.kappa - 2.0627).abs() < 1e-3);
    }

    #[test]
    fn explicit_kappa_checked() {
        assert!(parse_config("r2cbf.kappa = 2.0627").is_ok());
        let e = parse_config("\nr2cbf.kappa = 2.2").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert_eq!(e.key, "r2cbf.kappa");
    }

    #[test]
    fn noisy_sideslip_rejected_with_constraint_citation() {
        let e = parse_config("noise.sigma_beta_deg = 28.64788975654116").unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(e.message.contains("Constraint 2"), "{e}");
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        let e = parse_config("# header\nvehicle.m = heavy\n").unwrap_err();
        assert_eq!(e.to_string(), "line 2: vehicle.m: `heavy` is not a number");
        let e = parse_config("scenario.kind = sine\nbogus.key = 1").unwrap_err();
        assert_eq!(e.to_string(), "line 2: bogus.key: unknown key");
        let e = parse_config("just words").unwrap_err();
        assert_eq!(e.to_string(), "line 1: expected `key = value`");
        let e = parse_config("run.seed = 1\nrun.seed = 2").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn angles_in_degrees() {
        let c = parse_config("vehicle.delta_max_deg = 20").unwrap();
        assert!((c.params.limits.delta_max - 20f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn hash_ignores_formatting_and_seeds() {
        let a = parse_config("").unwrap();
        let b = parse_config("vehicle.m = 45000.0   # same\nrun.seed = 9").unwrap();
        let c = parse_config("vehicle.m = 46000").unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.hash.len(), 64);
    }

    #[test]
    fn spd_prior_and_dof_validated() {
        assert_eq!(parse_config("r2cbf.prior_sigma_ay = 0").unwrap_err().key, "r2cbf.prior_sigma_ay");
        assert_eq!(parse_config("r2cbf.nu0 = 2").unwrap_err().key, "r2cbf.nu0");
        assert_eq!(parse_config("r2cbf.lambda = 1.5").unwrap_err().key, "r2cbf.lambda");
    }
}
