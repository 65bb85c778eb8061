//! Scenarios, closed-loop orchestration, metrics and Monte Carlo validation.

pub mod metrics;
pub mod output;
pub mod run;
pub mod scenario;
pub mod suite;
pub mod validation;
