pub mod config;
pub mod io;
pub mod run;
pub mod selftest;

pub use config::ExperimentConfig;
pub use run::{report_directory, run_campaign, RunSummary};
