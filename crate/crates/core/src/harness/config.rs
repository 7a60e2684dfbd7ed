//! Experiment configuration: a TOML file with explicit keys. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::erm::SolverConfig;
use crate::error::{Error, Result};
use crate::free_energy::Construction;
use crate::suite::trials::check_ladder;
use crate::suite::{FamilySpec, ProblemSpec};

fn default_ladder() -> Vec<usize> {
    vec![200, 400, 800]
}
fn default_trials() -> usize {
    50
}
fn default_n_test() -> usize {
    2000
}
fn default_resamples() -> usize {
    crate::suite::stats::DEFAULT_RESAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeEnergySettings {
    /// Candidate count `M`.
    pub candidates: usize,
    pub construction: Construction,
    /// Perturbation scale of the solution cloud.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub betas: Vec<f64>,
    /// Grid points on `[0, π/2]` for the interpolation path.
    #[serde(default = "default_path_points")]
    pub path_points: usize,
    #[serde(default = "default_path_beta")]
    pub path_beta: f64,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_path_points() -> usize {
    10
}
fn default_path_beta() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbedSettings {
    pub s_grid: Vec<f64>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearMinSettings {
    /// Levels are `t = R̂* + offset`; `inf` gives the unconstrained minimum.
    pub t_offsets: Vec<f64>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Base sizes: `n` for most families, `d` for neural tangent.
    #[serde(default = "default_ladder")]
    pub ladder: Vec<usize>,
    /// Test samples per arm for fresh test-risk estimates.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Save every minimizer as a matrix container.
    #[serde(default)]
    pub save_thetas: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    pub families: Vec<FamilySpec>,
    #[serde(default)]
    pub free_energy: Option<FreeEnergySettings>,
    #[serde(default)]
    pub perturbed: Option<PerturbedSettings>,
    #[serde(default)]
    pub near_minimizers: Option<NearMinSettings>,
}

fn field_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_err(field, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigSyntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::ConfigSyntax(msg) => Error::ConfigSyntax(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigSyntax(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        check_ladder("ladder", &self.ladder)?;
        if self.trials == 0 {
            return Err(field_err("trials", "must be at least 1"));
        }
        if self.n_test == 0 {
            return Err(field_err("n_test", "must be at least 1"));
        }
        if self.bootstrap_resamples == 0 {
            return Err(field_err("bootstrap_resamples", "must be at least 1"));
        }
        if self.families.is_empty() {
            return Err(field_err("families", "at least one family is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, f) in self.families.iter().enumerate() {
            f.validate(&format!("families[{i}]"))?;
            if !seen.insert(f.id()) {
                return Err(field_err(format!("families[{i}].family"), format!("duplicate family {}", f.id())));
            }
        }
        positive("problem.theta_star_norm", self.problem.theta_star_norm)?;
        self.solver
            .validate()
            .map_err(|e| field_err("solver", e.to_string()))?;
        if let Some(fe) = &self.free_energy {
            if fe.candidates == 0 {
                return Err(field_err("free_energy.candidates", "must be at least 1"));
            }
            if fe.betas.is_empty() || fe.betas.windows(2).any(|w| w[0] >= w[1]) {
                return Err(field_err("free_energy.betas", "must be non-empty and strictly increasing"));
            }
            for b in &fe.betas {
                positive("free_energy.betas", *b)?;
            }
            positive("free_energy.path_beta", fe.path_beta)?;
            positive("free_energy.alpha", fe.alpha)?;
            if fe.path_points < 2 {
                return Err(field_err("free_energy.path_points", "must be at least 2"));
            }
        }
        if let Some(ps) = &self.perturbed {
            if ps.s_grid.is_empty() || ps.s_grid.iter().any(|s| *s == 0.0 || !s.is_finite() || !ps.s_grid.contains(&-s)) {
                return Err(field_err("perturbed.s_grid", "must be non-empty, symmetric and exclude 0"));
            }
            if ps.n_test == 0 {
                return Err(field_err("perturbed.n_test", "must be at least 1"));
            }
        }
        if let Some(nm) = &self.near_minimizers {
            if nm.t_offsets.iter().any(|t| t.is_nan()) {
                return Err(field_err("near_minimizers.t_offsets", "must not contain NaN"));
            }
            if nm.n_test == 0 {
                return Err(field_err("near_minimizers.n_test", "must be at least 1"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled in,
    /// output directory excluded).
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.output_dir = None;
        let value = serde_json::to_value(&canon)?;
        let bytes = serde_json::to_vec(&value)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
