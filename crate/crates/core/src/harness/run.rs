//! `run` and `report` commands: execute a campaign and summarize results.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::io::{fmt_f64, write_atomic, write_csv};
use crate::erm::{solve_erm, train_risk};
use crate::error::{Error, Result};
use crate::free_energy::{
    entropy_sandwich_check, free_energy_path, path_slope_bound, CandidateSet, Construction, InterpolationPath,
    PathPoint, SandwichReport,
};
use crate::matrix_io::save_matrix;
use crate::rng::Stream;
use crate::suite::perturbed::{perturbed_sweep_with_source, TestTerm};
use crate::suite::report::{gap_rows, GAP_CSV_HEADER};
use crate::suite::trials::trial_data;
use crate::suite::{
    build_instances, build_report, min_test_over_near_minimizers, parse_trial_csv, run_trials, trial_rows, Arm,
    FamilyInstance, NearMinResult, PerturbedRiskSweep, ReportConfig, TrialPlan, TrialResult, UniversalityReport,
    TRIAL_CSV_HEADER,
};

pub const TRIALS_FILE: &str = "trials.csv";
pub const PATH_FILE: &str = "path_traces.csv";
pub const D_CURVES_FILE: &str = "d_curves.csv";
pub const NEAR_MIN_FILE: &str = "near_minimizers.csv";
pub const FREE_ENERGY_FILE: &str = "free_energy.json";
pub const REPORT_FILE: &str = "report.json";
pub const GAP_FILE: &str = "gap_vs_n.csv";
pub const MANIFEST_FILE: &str = "MANIFEST";

#[derive(Debug, Clone, Serialize)]
pub struct FreeEnergyDiagnostics {
    pub family: String,
    pub n: usize,
    pub seed: u64,
    pub candidates: usize,
    pub construction: Construction,
    pub sandwich: SandwichReport,
    pub path: Vec<PathPoint>,
    pub max_segment_slope: f64,
    pub slope_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub trials: usize,
    pub quarantined: Vec<String>,
    pub diagnostic_errors: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    config_hash: String,
    version: &'static str,
    started_unix: u64,
    wall_time_secs: f64,
    threads: usize,
    summary: &'a RunSummary,
    file_sha256: Vec<(String, String)>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Diagnostic instances: the smallest ladder size of each family.
fn diagnostic_instances(instances: &[FamilyInstance]) -> Vec<&FamilyInstance> {
    let mut out: Vec<&FamilyInstance> = Vec::new();
    for inst in instances {
        match out.iter_mut().find(|o| o.family == inst.family) {
            Some(o) if inst.n < o.n => *o = inst,
            Some(_) => {}
            None => out.push(inst),
        }
    }
    out
}

fn free_energy_diagnostics(inst: &FamilyInstance, cfg: &ExperimentConfig, plan: &TrialPlan) -> Result<Option<FreeEnergyDiagnostics>> {
    let Some(fe) = &cfg.free_energy else { return Ok(None) };
    let data = trial_data(inst, plan, 0)?;
    let problem = &inst.problem;
    let y = problem.labels_from_noise(&data.x, &data.eps)?;
    let cand_seed = Stream::Candidates.seed(data.seed);
    let candidates = match fe.construction {
        Construction::SolutionCloud => {
            let center = solve_erm(problem, &data.x, &y, &plan.solver)?.theta_hat;
            CandidateSet::solution_cloud(&center, &problem.constraint, fe.candidates, fe.alpha, cand_seed)?
        }
        _ => CandidateSet::random_net(&problem.constraint, inst.p, problem.k, fe.candidates, fe.alpha, cand_seed)?,
    };
    let sandwich = entropy_sandwich_check(&candidates, problem, &data.x, &y, &fe.betas)?;
    let path = InterpolationPath::new(data.x.clone(), data.g.clone(), InterpolationPath::uniform_grid(fe.path_points))?;
    let trace = free_energy_path(&path, &candidates, problem, &data.eps, fe.path_beta)?;
    let max_segment_slope = trace.iter().map(|p| p.segment_slope).fold(0.0, f64::max);
    Ok(Some(FreeEnergyDiagnostics {
        family: inst.family.to_string(),
        n: inst.n,
        seed: data.seed,
        candidates: candidates.len(),
        construction: candidates.construction(),
        sandwich,
        path: trace,
        max_segment_slope,
        slope_bound: path_slope_bound(&path, &candidates, problem),
    }))
}

fn perturbed_diagnostics(inst: &FamilyInstance, cfg: &ExperimentConfig, plan: &TrialPlan) -> Result<Option<PerturbedRiskSweep>> {
    let Some(ps) = &cfg.perturbed else { return Ok(None) };
    let data = trial_data(inst, plan, 0)?;
    let y = inst.problem.labels_from_noise(&data.x, &data.eps)?;
    let seed = Stream::TestG.seed(data.seed);
    perturbed_sweep_with_source(&inst.problem, &data.x, &y, &inst.equiv, &ps.s_grid, ps.n_test, seed, &plan.solver).map(Some)
}

fn near_min_diagnostics(
    inst: &FamilyInstance,
    cfg: &ExperimentConfig,
    plan: &TrialPlan,
) -> Result<Option<(f64, Vec<NearMinResult>)>> {
    let Some(nm) = &cfg.near_minimizers else { return Ok(None) };
    let data = trial_data(inst, plan, 0)?;
    let problem = &inst.problem;
    let y = problem.labels_from_noise(&data.x, &data.eps)?;
    let sol = solve_erm(problem, &data.x, &y, &plan.solver)?;
    let r_star = train_risk(problem, &sol.theta_hat, &data.x, &y)?;
    let levels: Vec<f64> = nm.t_offsets.iter().map(|o| r_star + o).collect();
    let test = TestTerm::draw(problem, &inst.equiv, nm.n_test, Stream::TestG.seed(data.seed))?;
    Ok(Some((r_star, min_test_over_near_minimizers(problem, &data.x, &y, &test, &levels, &plan.solver)?)))
}

pub fn plan_for(cfg: &ExperimentConfig) -> TrialPlan {
    TrialPlan {
        master_seed: cfg.master_seed,
        trials: cfg.trials,
        n_test: cfg.n_test,
        solver: cfg.solver.clone(),
    }
}

/// Build instances and run the matched trials only.
pub fn run_trial_campaign(cfg: &ExperimentConfig) -> Result<(Vec<FamilyInstance>, Vec<TrialResult>)> {
    let instances = build_instances(&cfg.families, &cfg.problem, &cfg.ladder, cfg.master_seed)?;
    let results = run_trials(&instances, &plan_for(cfg))?;
    Ok((instances, results))
}

/// Trial CSV body exactly as written to disk.
pub fn trial_csv_bytes(results: &[TrialResult]) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    wtr.write_record(TRIAL_CSV_HEADER)?;
    for row in trial_rows(results) {
        wtr.write_record(&row)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Execute a full campaign into `out`.
pub fn run_campaign(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    std::fs::create_dir_all(out)?;
    let plan = plan_for(cfg);
    info!("building {} family instances", cfg.families.len());
    let (instances, results) = run_trial_campaign(cfg)?;
    let mut files = Vec::new();
    write_atomic(&out.join(TRIALS_FILE), &trial_csv_bytes(&results)?)?;
    files.push(TRIALS_FILE.to_string());
    info!("{} trials written", results.len());

    if cfg.save_thetas {
        let dir = out.join("thetas");
        std::fs::create_dir_all(&dir)?;
        for r in &results {
            for arm in [Arm::X, Arm::G] {
                if let Some(theta) = &r.arm(arm).theta_hat {
                    save_matrix(&dir.join(format!("{}.emx", r.theta_ref(arm))), theta)?;
                }
            }
        }
    }

    let diag = diagnostic_instances(&instances);
    let mut diagnostic_errors = Vec::new();
    let mut note = |family: &str, what: &str, e: Error| {
        warn!("{what} diagnostics failed for {family}: {e}");
        diagnostic_errors.push(format!("{family}: {what}: {e}"));
    };

    if cfg.free_energy.is_some() {
        let fe: Vec<Result<Option<FreeEnergyDiagnostics>>> =
            diag.par_iter().map(|i| free_energy_diagnostics(i, cfg, &plan)).collect();
        let mut all = Vec::new();
        let mut rows = Vec::new();
        let beta = cfg.free_energy.as_ref().map_or(0.0, |f| f.path_beta);
        for (inst, r) in diag.iter().zip(fe) {
            match r {
                Ok(Some(d)) => {
                    for p in &d.path {
                        rows.push(vec![
                            fmt_f64(p.t),
                            fmt_f64(p.f),
                            d.n.to_string(),
                            fmt_f64(beta),
                            d.family.clone(),
                            d.seed.to_string(),
                        ]);
                    }
                    all.push(d);
                }
                Ok(None) => {}
                Err(e) => note(inst.family, "free-energy", e),
            }
        }
        write_csv(&out.join(PATH_FILE), &["t", "f", "n", "beta", "family", "seed"], &rows)?;
        write_atomic(&out.join(FREE_ENERGY_FILE), &serde_json::to_vec_pretty(&all)?)?;
        files.push(PATH_FILE.to_string());
        files.push(FREE_ENERGY_FILE.to_string());
    }

    if cfg.perturbed.is_some() {
        let sweeps: Vec<Result<Option<PerturbedRiskSweep>>> =
            diag.par_iter().map(|i| perturbed_diagnostics(i, cfg, &plan)).collect();
        let mut rows = Vec::new();
        for (inst, r) in diag.iter().zip(sweeps) {
            match r {
                Ok(Some(sw)) => {
                    let violations = sw.sandwich_violations();
                    for p in &sw.points {
                        let violated = violations.iter().any(|v| v.s == p.s.abs());
                        rows.push(vec![
                            inst.family.to_string(),
                            inst.n.to_string(),
                            fmt_f64(p.s),
                            fmt_f64(p.r_star),
                            fmt_f64(p.d),
                            fmt_f64(sw.test_at_theta0),
                            fmt_f64(p.solver_gap),
                            p.quarantined.to_string(),
                            violated.to_string(),
                        ]);
                    }
                }
                Ok(None) => {}
                Err(e) => note(inst.family, "perturbed", e),
            }
        }
        let header = ["family", "n", "s", "r_star", "d", "test_at_theta0", "solver_gap", "quarantined", "sandwich_violated"];
        write_csv(&out.join(D_CURVES_FILE), &header, &rows)?;
        files.push(D_CURVES_FILE.to_string());
    }

    if let Some(nm) = &cfg.near_minimizers {
        let res: Vec<Result<Option<(f64, Vec<NearMinResult>)>>> =
            diag.par_iter().map(|i| near_min_diagnostics(i, cfg, &plan)).collect();
        let mut rows = Vec::new();
        for (inst, r) in diag.iter().zip(res) {
            match r {
                Ok(Some((r_star, levels))) => {
                    for (offset, lv) in nm.t_offsets.iter().zip(levels) {
                        rows.push(vec![
                            inst.family.to_string(),
                            inst.n.to_string(),
                            fmt_f64(r_star),
                            fmt_f64(*offset),
                            fmt_f64(lv.t),
                            fmt_f64(lv.test_risk),
                            fmt_f64(lv.train_risk),
                            fmt_f64(lv.residual),
                            lv.infeasible.to_string(),
                        ]);
                    }
                }
                Ok(None) => {}
                Err(e) => note(inst.family, "near-minimizer", e),
            }
        }
        let header = ["family", "n", "r_star", "t_offset", "t", "test_risk", "train_risk", "residual", "infeasible"];
        write_csv(&out.join(NEAR_MIN_FILE), &header, &rows)?;
        files.push(NEAR_MIN_FILE.to_string());
    }

    write_atomic(&out.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;
    files.push("config.toml".to_string());

    let summary = RunSummary {
        trials: results.len(),
        quarantined: results
            .iter()
            .filter(|r| r.is_quarantined())
            .map(|r| format!("{} n={} trial={}", r.family, r.n, r.trial))
            .collect(),
        diagnostic_errors,
        files,
    };
    let file_sha256 = summary
        .files
        .iter()
        .map(|f| Ok((f.clone(), sha256_file(&out.join(f))?)))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config_hash: cfg.hash()?,
        version: env!("CARGO_PKG_VERSION"),
        started_unix,
        wall_time_secs: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        summary: &summary,
        file_sha256,
    };
    write_atomic(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(summary)
}

/// Per-file problems found while loading trial CSVs.
#[derive(Debug, Clone)]
pub struct FileDiagnostic {
    pub file: PathBuf,
    pub message: String,
}

/// Trial CSVs in `dir`: files named `trials*.csv`, sorted by name.
pub fn find_trial_csvs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trials") && n.ends_with(".csv"))
        })
        .collect();
    found.sort();
    Ok(found)
}

/// Load and pair every trial CSV in `dir`.
pub fn load_results(dir: &Path) -> std::result::Result<Vec<TrialResult>, Vec<FileDiagnostic>> {
    let files = match find_trial_csvs(dir) {
        Ok(f) => f,
        Err(e) => {
            return Err(vec![FileDiagnostic { file: dir.to_path_buf(), message: e.to_string() }]);
        }
    };
    if files.is_empty() {
        return Err(vec![FileDiagnostic {
            file: dir.to_path_buf(),
            message: "no trials*.csv files found".into(),
        }]);
    }
    let mut results = Vec::new();
    let mut problems = Vec::new();
    for f in files {
        match std::fs::read_to_string(&f).map_err(Error::from).and_then(|t| parse_trial_csv(&t)) {
            Ok(mut r) => results.append(&mut r),
            Err(e) => problems.push(FileDiagnostic { file: f, message: e.to_string() }),
        }
    }
    if problems.is_empty() {
        results.sort_by(|a, b| (a.family.as_str(), a.n, a.trial).cmp(&(b.family.as_str(), b.n, b.trial)));
        Ok(results)
    } else {
        Err(problems)
    }
}

/// Build the report for `dir` and write it (and the gap CSV) into `out`.
pub fn report_directory(dir: &Path, out: &Path, cfg: &ReportConfig) -> std::result::Result<UniversalityReport, Vec<FileDiagnostic>> {
    let results = load_results(dir)?;
    let wrap = |e: Error| vec![FileDiagnostic { file: out.to_path_buf(), message: e.to_string() }];
    let report = build_report(&results, cfg).map_err(wrap)?;
    std::fs::create_dir_all(out).map_err(|e| wrap(e.into()))?;
    let json = serde_json::to_vec_pretty(&report).map_err(|e| wrap(e.into()))?;
    write_atomic(&out.join(REPORT_FILE), &json).map_err(wrap)?;
    write_csv(&out.join(GAP_FILE), &GAP_CSV_HEADER, &gap_rows(&report)).map_err(wrap)?;
    Ok(report)
}
