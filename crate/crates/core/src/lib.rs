//! Risk-constrained control barrier functions for multi-wheel vehicles.

pub mod bayes;
pub mod controller;
pub mod cvar;
pub mod error;
pub mod harness;
pub mod input;
pub mod nominal;
pub mod normal;
pub mod path;
pub mod plant;
pub mod uncertainty;

pub use error::{Error, Result};
