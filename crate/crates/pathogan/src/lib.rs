//! Experiment runner for `pathogan-core`: JSON configs, CSV/JSON outputs,
//! manifests with content hashes, and parallel comparison suites.

pub mod config;
pub mod io;
pub mod suite;

pub use config::{ExperimentConfig, LoadedConfig};
pub use suite::{cmd_compare, cmd_run, cmd_stats, SuiteError};
