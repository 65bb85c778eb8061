//! Peak, margin, tracking and intervention metrics of a run.

/// Channel limits against which margins are taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricLimits {
    /// rad
    pub beta: f64,
    /// rad/s
    pub omega: f64,
    /// m/s^2
    pub ay: f64,
    /// rad
    pub phi: f64,
}

impl Default for MetricLimits {
    fn default() -> Self {
        Self {
            beta: 0.15,
            omega: 0.20,
            ay: 5.0,
            phi: 20f64.to_radians(),
        }
    }
}

/// Minimal per-step view the metrics need (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSample {
    pub beta: f64,
    pub omega: f64,
    pub ay: f64,
    pub phi: f64,
    pub e_y: f64,
    pub e_psi: f64,
    pub deviated: bool,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub beta_max_deg: f64,
    pub omega_max_deg: f64,
    pub ay_max: f64,
    pub phi_max_deg: f64,
    pub margin_beta: f64,
    pub margin_omega: f64,
    pub margin_ay: f64,
    pub margin_phi: f64,
    pub margin_min: f64,
    pub rms_ey: f64,
    pub rms_epsi_deg: f64,
    /// Percentage of steps whose output differs from the projected nominal.
    pub rho_cbf: f64,
    /// Percentage of steps with a positive barrier multiplier.
    pub rho_active: f64,
    /// Steps with `|beta| > beta_lim`.
    pub beta_crossings: usize,
    pub steps: usize,
}

impl MetricsReport {
    /// Names and values in a fixed order, shared by every writer.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("beta_max_deg", self.beta_max_deg),
            ("omega_max_deg_s", self.omega_max_deg),
            ("ay_max", self.ay_max),
            ("phi_max_deg", self.phi_max_deg),
            ("margin_beta", self.margin_beta),
            ("margin_omega", self.margin_omega),
            ("margin_ay", self.margin_ay),
            ("margin_phi", self.margin_phi),
            ("margin_min", self.margin_min),
            ("rms_ey", self.rms_ey),
            ("rms_epsi_deg", self.rms_epsi_deg),
            ("rho_cbf", self.rho_cbf),
            ("rho_active", self.rho_active),
            ("beta_crossings", self.beta_crossings as f64),
            ("steps", self.steps as f64),
        ]
    }
}

fn margin(peak: f64, limit: f64) -> f64 {
    (1.0 - peak / limit) * 100.0
}

pub fn compute_metrics(samples: &[MetricSample], limits: &MetricLimits) -> MetricsReport {
    if samples.is_empty() {
        return MetricsReport::default();
    }
    let n = samples.len() as f64;
    let peak = |f: fn(&MetricSample) -> f64| samples.iter().map(|s| f(s).abs()).fold(0.0, f64::max);
    let beta = peak(|s| s.beta);
    let omega = peak(|s| s.omega);
    let ay = peak(|s| s.ay);
    let phi = peak(|s| s.phi);
    let (mb, mo, ma, mp) = (
        margin(beta, limits.beta),
        margin(omega, limits.omega),
        margin(ay, limits.ay),
        margin(phi, limits.phi),
    );
    let rms = |f: fn(&MetricSample) -> f64| (samples.iter().map(|s| f(s).powi(2)).sum::<f64>() / n).sqrt();
    let count = |f: fn(&MetricSample) -> bool| samples.iter().filter(|s| f(s)).count();
    MetricsReport {
        beta_max_deg: beta.to_degrees(),
        omega_max_deg: omega.to_degrees(),
        ay_max: ay,
        phi_max_deg: phi.to_degrees(),
        margin_beta: mb,
        margin_omega: mo,
        margin_ay: ma,
        margin_phi: mp,
        margin_min: mb.min(mo).min(ma).min(mp),
        rms_ey: rms(|s| s.e_y),
        rms_epsi_deg: rms(|s| s.e_psi).to_degrees(),
        rho_cbf: 100.0 * count(|s| s.deviated) as f64 / n,
        rho_active: 100.0 * count(|s| s.active) as f64 / n,
        beta_crossings: samples.iter().filter(|s| s.beta.abs() > limits.beta).count(),
        steps: samples.len(),
    }
}

/// Median of each field across reports.
pub fn median_report(reports: &[MetricsReport]) -> MetricsReport {
    if reports.is_empty() {
        return MetricsReport::default();
    }
    let med = |f: fn(&MetricsReport) -> f64| {
        let mut v: Vec<f64> = reports.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    };
    MetricsReport {
        beta_max_deg: med(|r| r.beta_max_deg),
        omega_max_deg: med(|r| r.omega_max_deg),
        ay_max: med(|r| r.ay_max),
        phi_max_deg: med(|r| r.phi_max_deg),
        margin_beta: med(|r| r.margin_beta),
        margin_omega: med(|r| r.margin_omega),
        margin_ay: med(|r| r.margin_ay),
        margin_phi: med(|r| r.margin_phi),
        margin_min: med(|r| r.margin_min),
        rms_ey: med(|r| r.rms_ey),
        rms_epsi_deg: med(|r| r.rms_epsi_deg),
        rho_cbf: med(|r| r.rho_cbf),
        rho_active: med(|r| r.rho_active),
        beta_crossings: reports.iter().map(|r| r.beta_crossings).sum(),
        steps: med(|r| r.steps as f64) as usize,
    }
}
