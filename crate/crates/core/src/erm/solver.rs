//! Projected gradient descent with Armijo backtracking.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConstraintSet, ErmObjective, ErmProblem, Objective};
use crate::error::{invalid, Error, Result};
use crate::features::standard_normal_matrix;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Tolerance on `‖Θ - P(Θ - ∇f(Θ))‖_F`.
    pub tol: f64,
    /// Restarts used for nonconvex problems; convex problems use one.
    pub restarts: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    pub seed: u64,
    /// Keep the per-iteration objective trace in the solution.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-8,
            restarts: 8,
            initial_step: 1.0,
            shrink: 0.5,
            armijo_c: 1e-4,
            seed: 0,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        if !(self.tol > 0.0) || !(self.initial_step > 0.0) {
            return Err(invalid("tol and initial_step must be positive"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) || !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(invalid("shrink and armijo_c must lie in (0, 1)"));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    /// Hit `max_iters` before reaching `tol`.
    MaxIters,
    /// Line search could no longer resolve a decrease in floating point.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct ErmSolution {
    pub theta_hat: DMatrix<f64>,
    pub objective: f64,
    pub grad_map_norm: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub status: SolveStatus,
    /// Objective after each accepted step (empty unless requested).
    pub trace: Vec<f64>,
}

impl ErmSolution {
    pub fn flags(&self) -> Vec<&'static str> {
        match self.status {
            SolveStatus::Converged => vec![],
            SolveStatus::MaxIters => vec!["max-iters"],
            SolveStatus::Stalled => vec!["stalled"],
        }
    }
}

fn grad_map_norm(set: &ConstraintSet, theta: &DMatrix<f64>, grad: &DMatrix<f64>) -> f64 {
    let stepped = set.project(&(theta - grad));
    (theta - stepped).norm()
}

/// Rounding floor below which a predicted decrease cannot be resolved by
/// comparing objective values.
fn noise_floor(f: f64) -> f64 {
    16.0 * f64::EPSILON * f.abs().max(1.0)
}

/// Minimize `objective` over `set` (column-wise) from `start`.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    set: &ConstraintSet,
    start: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<ErmSolution> {
    cfg.validate()?;
    let mut theta = set.project(start);
    let (mut f, mut grad) = objective.value_grad(&theta);
    if !f.is_finite() {
        return Err(Error::SolverDiverged { iteration: 0 });
    }
    let mut step = cfg.initial_step;
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let mut gm = grad_map_norm(set, &theta, &grad);
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        if gm <= cfg.tol {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        loop {
            let candidate = set.project(&(&theta - &grad * step));
            let delta = &candidate - &theta;
            let slope = grad.dot(&delta);
            let (f_new, g_new) = objective.value_grad(&candidate);
            if f_new.is_nan() {
                return Err(Error::SolverDiverged { iteration: iterations });
            }
            let predicted = cfg.armijo_c * slope;
            let ok = if -predicted > noise_floor(f) {
                f_new <= f + predicted
            } else {
                // Decrease is below rounding resolution: accept on the
                // descent-lemma curvature test, computed from gradients.
                let curvature = (&g_new - &grad).dot(&delta);
                curvature <= delta.norm_squared() / step && f_new <= f + noise_floor(f)
            };
            if ok {
                accepted = Some((candidate, f_new, g_new));
                break;
            }
            step *= cfg.shrink;
            if step < 1e-20 * cfg.initial_step {
                break;
            }
        }
        let Some((candidate, f_new, g_new)) = accepted else {
            status = SolveStatus::Stalled;
            break;
        };
        debug_assert!(f_new <= f + noise_floor(f), "objective increased: {f} -> {f_new}");
        theta = candidate;
        f = f_new;
        grad = g_new;
        if cfg.record_trace {
            trace.push(f);
        }
        gm = grad_map_norm(set, &theta, &grad);
        step = (step * 2.0).min(cfg.initial_step.max(1.0) * 1e6);
    }
    if gm <= cfg.tol {
        status = SolveStatus::Converged;
    }
    Ok(ErmSolution {
        objective: objective.value(&theta),
        theta_hat: theta,
        grad_map_norm: gm,
        iterations,
        restarts_used: 1,
        status,
        trace,
    })
}

/// Initial point for restart `r`: zero for `r = 0`, otherwise a projected
/// Gaussian draw with entries of variance `1/p`.
pub(crate) fn restart_init(set: &ConstraintSet, p: usize, k: usize, seed: u64, r: usize) -> DMatrix<f64> {
    if r == 0 {
        return DMatrix::zeros(p, k);
    }
    let g = standard_normal_matrix(p, k, derive_seed(seed, &[0x1417, r as u64])) / (p as f64).sqrt();
    set.project(&g)
}

/// Run [`minimize`] over restarts and keep the lowest objective (ties to the
/// lowest restart index).
pub fn minimize_with_restarts<O: Objective + ?Sized>(
    objective: &O,
    set: &ConstraintSet,
    p: usize,
    k: usize,
    convex: bool,
    cfg: &SolverConfig,
) -> Result<ErmSolution> {
    let restarts = if convex { 1 } else { cfg.restarts };
    let runs: Vec<Result<ErmSolution>> = (0..restarts)
        .into_par_iter()
        .map(|r| minimize(objective, set, &restart_init(set, p, k, cfg.seed, r), cfg))
        .collect();
    let mut best: Option<ErmSolution> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
                    best = Some(sol);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(mut sol) => {
            sol.restarts_used = restarts;
            Ok(sol)
        }
        None => Err(first_err.expect("at least one restart ran")),
    }
}

/// Solve `min_{Θ ∈ C^k} (1/n) Σ ℓ(Θᵀx_i; y_i) + r(Θ)`.
pub fn solve_erm(problem: &ErmProblem, x: &DMatrix<f64>, y: &[f64], cfg: &SolverConfig) -> Result<ErmSolution> {
    if x.nrows() == 0 {
        return Err(invalid("ERM needs at least one sample"));
    }
    super::check_shapes(problem, &DMatrix::zeros(problem.p(), problem.k), x, y)?;
    let objective = ErmObjective::train(problem, x, y);
    minimize_with_restarts(&objective, &problem.constraint, problem.p(), problem.k, problem.is_convex(), cfg)
}
