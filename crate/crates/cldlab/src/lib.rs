//! Experiment harness for `cldlab-core`: JSON configs and family documents,
//! deterministic runs and sweeps, CSV/JSON results, and the `cldlab` CLI.

pub mod cli;
pub mod config;
pub mod error;
pub mod family;
pub mod io;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use run::{run_experiment, ResultRecord, ResultRow, Summary};
