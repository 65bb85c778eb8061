mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use r2cbf::controller::{ControllerKind, Variant};
use r2cbf::harness::output::{metrics_kv, suite_table_csv, timeseries_csv, validation_kv};
use r2cbf::harness::run::{run_closed_loop, RunRecord};
use r2cbf::harness::scenario::{build_scenario, ScenarioKind};
use r2cbf::harness::suite::{ablation_suite, controller_suite, SuiteEntry};
use r2cbf::harness::validation::mc_safety_validation;

use config::{parse_config, RunConfig};

#[derive(Parser)]
#[command(name = "r2cbf", version, about = "Risk-constrained CBF simulations for a six-wheel truck")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat key = value); omitted keys use the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// dlc or sine; overrides scenario.kind.
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// First seed; overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run.
    Run {
        #[command(flatten)]
        common: Common,
        /// pure-clf, classic-cbf, robust-cbf or r2cbf.
        #[arg(long)]
        controller: Option<ControllerKind>,
        /// full, loadvar, no-cvar or no-bayes (r2cbf only).
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// All four controllers over a seed range.
    Suite {
        #[command(flatten)]
        common: Common,
        /// Number of seeds; overrides run.seeds.
        #[arg(long)]
        seeds: Option<u64>,
        /// Also write every run's time series.
        #[arg(long)]
        timeseries: bool,
    },
    /// The four R2CBF variants over a seed range.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        timeseries: bool,
    },
    /// Monte Carlo check of the per-step violation bound.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text).with_context(|| match &common.config {
        Some(p) => format!("invalid config {}", p.display()),
        None => "invalid default config".to_string(),
    })?;
    if let Some(s) = common.scenario {
        cfg.scenario = s;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_stem(rec: &RunRecord) -> String {
    if rec.controller == ControllerKind::R2Cbf && rec.variant != Variant::Full {
        format!("{}_{}_{}_s{}", rec.scenario, rec.controller, rec.variant, rec.seed)
    } else {
        format!("{}_{}_s{}", rec.scenario, rec.controller, rec.seed)
    }
}

fn write_run(dir: &Path, rec: &RunRecord, series: bool) -> Result<()> {
    let stem = run_stem(rec);
    if series {
        write(dir, &format!("{stem}.csv"), &timeseries_csv(rec))?;
    }
    write(dir, &format!("{stem}.txt"), &metrics_kv(rec))
}

fn report_failures(rec: &RunRecord) -> usize {
    for f in &rec.assertion_failures {
        eprintln!("{}: assertion failed: {f}", run_stem(rec));
    }
    rec.assertion_failures.len()
}

fn cmd_run(common: &Common, controller: Option<ControllerKind>, variant: Option<Variant>) -> Result<bool> {
    let cfg = load_config(common)?;
    let kind = controller.unwrap_or(cfg.controller);
    let spec = cfg.run_spec(kind, variant.unwrap_or(cfg.variant));
    let sc = build_scenario(cfg.scenario, &cfg.overrides(cfg.scenario), &cfg.params, cfg.seed)?;
    let rec = run_closed_loop(&sc, &spec, cfg.seed)?;
    write_run(&common.out, &rec, true)?;
    let m = &rec.metrics;
    println!(
        "{} {:?}: beta_max {:.3} deg, margin_min {:.1} %, rms e_y {:.3} m, rho_cbf {:.1} %",
        run_stem(&rec),
        rec.status,
        m.beta_max_deg,
        m.margin_min,
        m.rms_ey,
        m.rho_cbf
    );
    Ok(report_failures(&rec) == 0)
}

fn finish_suite(common: &Common, cfg: &RunConfig, entries: &[SuiteEntry], name: &str, series: bool) -> Result<bool> {
    let seeds = cfg.seed_list();
    let mut failures = 0;
    for e in entries {
        for rec in &e.records {
            write_run(&common.out, rec, series)?;
            failures += report_failures(rec);
        }
        let m = &e.median;
        println!(
            "{:16} beta_max {:7.3} deg  margin_min {:6.1} %  rms e_y {:7.3} m  rho_cbf {:5.1} %  crossings {}  diverged {}",
            e.label(),
            m.beta_max_deg,
            m.margin_min,
            m.rms_ey,
            m.rho_cbf,
            m.beta_crossings,
            e.diverged_runs()
        );
    }
    write(&common.out, name, &suite_table_csv(entries, &cfg.hash, &seeds))?;
    Ok(failures == 0)
}

fn cmd_suite(common: &Common, seeds: Option<u64>, series: bool, ablation: bool) -> Result<bool> {
    let mut cfg = load_config(common)?;
    if let Some(n) = seeds {
        anyhow::ensure!(n > 0, "--seeds must be positive");
        cfg.seeds = n;
    }
    let ov = cfg.overrides(cfg.scenario);
    let base = cfg.run_spec(cfg.controller, cfg.variant);
    let seed_list = cfg.seed_list();
    let (entries, name) = if ablation {
        (ablation_suite(cfg.scenario, &ov, &base, &seed_list)?, format!("ablation_{}.csv", cfg.scenario))
    } else {
        (controller_suite(cfg.scenario, &ov, &base, &seed_list)?, format!("suite_{}.csv", cfg.scenario))
    };
    finish_suite(common, &cfg, &entries, &name, series)
}

fn cmd_validate(common: &Common, trials: usize) -> Result<bool> {
    let cfg = load_config(common)?;
    anyhow::ensure!(trials >= 10_000, "--trials must be at least 10000");
    let rep = mc_safety_validation(cfg.beta_risk, trials, 0.0, cfg.seed)?;
    let text = validation_kv(&rep, &cfg.hash, cfg.seed);
    write(&common.out, "validation.txt", &text)?;
    print!("{text}");
    Ok(rep.within(3.0))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            common,
            controller,
            variant,
        } => cmd_run(common, *controller, *variant),
        Command::Suite {
            common,
            seeds,
            timeseries,
        } => cmd_suite(common, *seeds, *timeseries, false),
        Command::Ablation {
            common,
            seeds,
            timeseries,
        } => cmd_suite(common, *seeds, *timeseries, true),
        Command::Validate { common, trials } => cmd_validate(common, *trials),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
