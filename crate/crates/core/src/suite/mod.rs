//! Matched Monte Carlo campaigns comparing feature models with their
//! Gaussian equivalents, and the statistics that summarize them.

pub mod stats;
pub mod trials;

pub use trials::{
    build_instances, parse_trial_csv, run_trial, run_trials, trial_rows, Arm, ArmOutcome, FamilyInstance, FamilySpec,
    ProblemSpec, TrialPlan, TrialResult, TRIAL_CSV_HEADER,
};
pub mod report;

pub use report::{build_report, FamilyReport, ReportConfig, SizeRecord, UniversalityReport, Verdict};
pub mod perturbed;

pub use perturbed::{min_test_over_near_minimizers, perturbed_sweep, NearMinResult, PerturbedRiskSweep, TestTerm};
