//! Text artifacts: per-run time series CSV, per-run key=value summary and
//! the suite comparison table. Every file opens with a `#` header naming the
//! config hash and seed(s).

use std::fmt::Write;

use super::run::{RunRecord, RunStatus};
use super::suite::SuiteEntry;
use super::validation::ValidationReport;

fn header(kind: &str, config_hash: &str, seeds: &str) -> String {
    format!("# r2cbf {kind} config_hash={config_hash} seed={seeds}\n")
}

fn seed_list(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

pub const TIMESERIES_COLUMNS: [&str; 31] = [
    "t", "x", "y", "psi", "vx", "vy", "omega_z", "beta", "ay", "phi", "e_y", "e_psi", "v_ref",
    "r_beta", "r_omega", "r_ay", "delta_nom", "delta", "t1", "t2", "t3", "t4", "t5", "t6", "xi",
    "active", "deviated", "sigma_param", "margin", "mu_h", "sigma_h",
];

pub fn timeseries_csv(rec: &RunRecord) -> String {
    let mut s = header("timeseries", &rec.config_hash, &rec.seed.to_string());
    s.push_str(&TIMESERIES_COLUMNS.join(","));
    s.push('\n');
    for r in &rec.rows {
        let st = &r.state;
        let mut vals = vec![
            r.t, st.x, st.y, st.psi, st.vx, st.vy, st.omega_z, r.beta, r.ay, r.phi, r.e_y, r.e_psi,
            r.v_ref, r.r_meas[0], r.r_meas[1], r.r_meas[2], r.u_nom.delta, r.u.delta,
        ];
        vals.extend(r.u.torques.iter());
        vals.extend([
            r.xi,
            f64::from(u8::from(r.active)),
            f64::from(u8::from(r.deviated)),
            r.sigma_param,
            r.margin,
            r.mu_h,
            r.sigma_h,
        ]);
        let line: Vec<String> = vals.iter().map(|v| format!("{v:.9e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

const COUNT_FIELDS: [&str; 2] = ["beta_crossings", "steps"];

fn status_fields(status: &RunStatus) -> (&'static str, f64, String) {
    match status {
        RunStatus::Completed => ("completed", f64::NAN, String::new()),
        RunStatus::Diverged { t } => ("diverged", *t, String::new()),
        RunStatus::Failed { t, reason } => ("failed", *t, reason.clone()),
    }
}

pub fn metrics_kv(rec: &RunRecord) -> String {
    let mut s = header("metrics", &rec.config_hash, &rec.seed.to_string());
    let (status, t, reason) = status_fields(&rec.status);
    let _ = writeln!(s, "scenario = {}", rec.scenario);
    let _ = writeln!(s, "controller = {}", rec.controller);
    let _ = writeln!(s, "variant = {}", rec.variant);
    let _ = writeln!(s, "status = {status}");
    if !t.is_nan() {
        let _ = writeln!(s, "status_t = {t:.2}");
    }
    if !reason.is_empty() {
        let _ = writeln!(s, "status_reason = {reason}");
    }
    for (k, v) in rec.metrics.fields() {
        if COUNT_FIELDS.contains(&k) {
            let _ = writeln!(s, "{k} = {v}");
        } else {
            let _ = writeln!(s, "{k} = {v:.6}");
        }
    }
    let _ = writeln!(s, "kkt_audits = {}", rec.kkt_audits);
    let _ = writeln!(s, "kkt_audit_max = {:.3e}", rec.kkt_audit_max);
    let _ = writeln!(s, "assertion_failures = {}", rec.assertion_failures.len());
    for f in &rec.assertion_failures {
        let _ = writeln!(s, "# assertion: {f}");
    }
    s
}

/// One row per entry with the median metrics over its seeds.
pub fn suite_table_csv(entries: &[SuiteEntry], config_hash: &str, seeds: &[u64]) -> String {
    let mut s = header("suite", config_hash, &seed_list(seeds));
    let names: Vec<&str> = entries
        .first()
        .map(|e| e.median.fields().into_iter().map(|(k, _)| k).collect())
        .unwrap_or_default();
    let _ = writeln!(s, "controller,{},diverged_runs,assertion_failures", names.join(","));
    for e in entries {
        let vals: Vec<String> = e.median.fields().iter().map(|(_, v)| format!("{v:.6}")).collect();
        let _ = writeln!(
            s,
            "{},{},{},{}",
            e.label(),
            vals.join(","),
            e.diverged_runs(),
            e.assertion_failures()
        );
    }
    s
}

pub fn validation_kv(rep: &ValidationReport, config_hash: &str, seed: u64) -> String {
    let mut s = header("validation", config_hash, &seed.to_string());
    let _ = writeln!(s, "beta_risk = {}", rep.beta_risk);
    let _ = writeln!(s, "kappa = {:.6}", rep.kappa);
    let _ = writeln!(s, "trials = {}", rep.trials);
    let _ = writeln!(s, "violations = {}", rep.violations);
    let _ = writeln!(s, "rate = {:.6}", rep.rate);
    let _ = writeln!(s, "standard_error = {:.6}", rep.standard_error);
    let _ = writeln!(s, "ci95_low = {:.6}", rep.ci_low);
    let _ = writeln!(s, "ci95_high = {:.6}", rep.ci_high);
    let _ = writeln!(s, "bound = {:.6}", rep.bound);
    let _ = writeln!(s, "within_3se = {}", rep.within(3.0));
    let _ = writeln!(s, "max_placement_error = {:.3e}", rep.max_placement_error);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ControllerKind;
    use crate::harness::run::{run_closed_loop, RunSpec};
    use crate::harness::scenario::{build_scenario, ScenarioKind, ScenarioOverrides};
    use crate::plant::VehicleParams;

    fn short_run() -> RunRecord {
        let ov = ScenarioOverrides {
            duration: Some(1.0),
            ..Default::default()
        };
        let sc = build_scenario(ScenarioKind::Sine, &ov, &VehicleParams::default(), 7).unwrap();
        let mut spec = RunSpec::new(ControllerKind::R2Cbf);
        spec.config_hash = "abc123".into();
        run_closed_loop(&sc, &spec, 7).unwrap()
    }

    #[test]
    fn timeseries_has_header_and_one_line_per_step() {
        let rec = short_run();
        let csv = timeseries_csv(&rec);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# r2cbf timeseries config_hash=abc123 seed=7");
        assert_eq!(lines.len(), 2 + rec.rows.len());
        assert!(lines[2..].iter().all(|l| l.split(',').count() == TIMESERIES_COLUMNS.len()));
    }

    #[test]
    fn metrics_file_is_key_value() {
        let kv = metrics_kv(&short_run());
        for l in kv.lines().filter(|l| !l.starts_with('#')) {
            assert!(l.contains(" = "), "{l}");
        }
        assert!(kv.contains("status = completed"));
    }
}
