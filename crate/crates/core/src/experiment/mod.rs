//! Experiment runner: `key = value` configs, analytic profiles and the
//! sweep over sub-interval and inner-step counts with CSV output.

mod config;
mod profile;
mod runner;

pub use config::{normalize, parse_config, ExperimentConfig, KEYS};
pub use profile::Profile;
pub use runner::{
    run_experiment, write_run_csv, ExperimentReport, RunSummary, RUN_CSV_HEADER, SUMMARY_CSV_HEADER,
};
