//! Multi-seed comparisons: the four controllers, and the four R2CBF variants.

use rayon::prelude::*;

use super::metrics::{median_report, MetricsReport};
use super::run::{run_closed_loop, RunRecord, RunSpec};
use super::scenario::{build_scenario, ScenarioKind, ScenarioOverrides};
use crate::controller::{ControllerKind, Variant};
use crate::error::Result;

/// Runs sharing one controller configuration, with their per-field medians.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub controller: ControllerKind,
    pub variant: Variant,
    pub records: Vec<RunRecord>,
    pub median: MetricsReport,
}

impl SuiteEntry {
    pub fn label(&self) -> String {
        if self.controller == ControllerKind::R2Cbf && self.variant != Variant::Full {
            format!("{}+{}", self.controller, self.variant)
        } else {
            self.controller.to_string()
        }
    }

    pub fn diverged_runs(&self) -> usize {
        self.records.iter().filter(|r| r.diverged()).count()
    }

    pub fn assertion_failures(&self) -> usize {
        self.records.iter().map(|r| r.assertion_failures.len()).sum()
    }
}

fn run_seeds(
    kind: ScenarioKind,
    overrides: &ScenarioOverrides,
    spec: &RunSpec,
    seeds: &[u64],
) -> Result<SuiteEntry> {
    let records = seeds
        .par_iter()
        .map(|&seed| {
            let sc = build_scenario(kind, overrides, &spec.params, seed)?;
            run_closed_loop(&sc, spec, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = records.iter().map(|r| r.metrics).collect();
    Ok(SuiteEntry {
        controller: spec.kind,
        variant: spec.variant,
        median: median_report(&reports),
        records,
    })
}

/// Pure-CLF, Classic CBF, Robust-CBF and R2CBF over the same seeds.
pub fn controller_suite(
    kind: ScenarioKind,
    overrides: &ScenarioOverrides,
    base: &RunSpec,
    seeds: &[u64],
) -> Result<Vec<SuiteEntry>> {
    ControllerKind::ALL
        .iter()
        .map(|&c| {
            let spec = RunSpec {
                kind: c,
                variant: Variant::Full,
                ..base.clone()
            };
            run_seeds(kind, overrides, &spec, seeds)
        })
        .collect()
}

/// Full R2CBF, +LoadVar, without CVaR and without Bayesian learning.
pub fn ablation_suite(
    kind: ScenarioKind,
    overrides: &ScenarioOverrides,
    base: &RunSpec,
    seeds: &[u64],
) -> Result<Vec<SuiteEntry>> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let spec = RunSpec {
                kind: ControllerKind::R2Cbf,
                variant: v,
                ..base.clone()
            };
            run_seeds(kind, overrides, &spec, seeds)
        })
        .collect()
}
