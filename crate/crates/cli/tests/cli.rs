use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn r2cbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2cbf")).args(args).output().unwrap()
}

fn short_config(dir: &Path) -> String {
    let p = dir.join("short.conf");
    fs::write(&p, "scenario.duration = 4  # seconds\nrun.seeds = 2\n").unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn repeated_run_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path());
    let outs: Vec<_> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    for o in &outs {
        let st = r2cbf(&["run", "--config", &cfg, "--scenario", "dlc", "--controller", "r2cbf", "--seed", "5", "--out", o.to_str().unwrap()]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    for name in ["dlc_r2cbf_s5.csv", "dlc_r2cbf_s5.txt"] {
        let a = fs::read(outs[0].join(name)).unwrap();
        let b = fs::read(outs[1].join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
    let head = fs::read_to_string(outs[0].join("dlc_r2cbf_s5.csv")).unwrap();
    let first = head.lines().next().unwrap();
    assert!(first.starts_with("# r2cbf timeseries config_hash=") && first.ends_with("seed=5"), "{first}");
}

#[test]
fn suite_table_has_metric_columns_for_four_controllers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path());
    let out = tmp.path().join("suite");
    let st = r2cbf(&["suite", "--config", &cfg, "--scenario", "sine", "--out", out.to_str().unwrap()]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let table = fs::read_to_string(out.join("suite_sine.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("# r2cbf suite config_hash=") && lines[0].ends_with("seed=0;1"));
    let cols: Vec<&str> = lines[1].split(',').collect();
    for c in [
        "beta_max_deg",
        "omega_max_deg_s",
        "ay_max",
        "phi_max_deg",
        "margin_min",
        "rms_ey",
        "rms_epsi_deg",
        "rho_cbf",
    ] {
        assert!(cols.contains(&c), "missing {c}");
    }
    let rows: Vec<&str> = lines[2..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["pure-clf", "classic-cbf", "robust-cbf", "r2cbf"]);
    assert!(lines[2..].iter().all(|l| l.split(',').count() == cols.len()));
}

#[test]
fn ablation_writes_four_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path());
    let out = tmp.path().join("abl");
    let st = r2cbf(&["ablation", "--config", &cfg, "--seeds", "1", "--out", out.to_str().unwrap()]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let table = fs::read_to_string(out.join("ablation_sine.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["r2cbf", "r2cbf+loadvar", "r2cbf+no-cvar", "r2cbf+no-bayes"]);
}

#[test]
fn validate_reports_rate_against_tail_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let st = r2cbf(&["validate", "--trials", "20000", "--out", tmp.path().to_str().unwrap()]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let rep = fs::read_to_string(tmp.path().join("validation.txt")).unwrap();
    let get = |k: &str| -> f64 {
        rep.lines()
            .find_map(|l| l.strip_prefix(&format!("{k} = ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((get("bound") - 0.0197).abs() < 5e-4);
    assert!((get("rate") - get("bound")).abs() < 0.005);
    assert!(rep.contains("within_3se = true"));
}

#[test]
fn invalid_config_exits_nonzero_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.conf");
    fs::write(&p, "run.seeds = 1\nnoise.sigma_beta_deg = 28.6\n").unwrap();
    let st = r2cbf(&["run", "--config", p.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(2));
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("line 2: noise.sigma_beta_deg"), "{err}");
}
