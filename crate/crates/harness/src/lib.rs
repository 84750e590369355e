//! Experiment harness for the analog gradient-noise simulator: JSON
//! configs, single runs, sweeps, dataset files and plot-data tables.

pub mod config;
pub mod dataset;
pub mod emit;
pub mod error;
pub mod num;
pub mod record;
pub mod runner;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use record::ExperimentRecord;
