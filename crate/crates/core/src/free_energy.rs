//! Softmin free energy over finite candidate sets, the sin/cos interpolation
//! path between feature and Gaussian matrices, and their diagnostics.
//!
//! The free energy at inverse temperature `β` is
//! `f = -(1/(nβ)) log Σ_Θ exp(-β n R̂_n(Θ))`, which always satisfies
//! `min R̂ - log(M)/(nβ) ≤ f ≤ min R̂`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erm::{operator_norm, train_risk, ConstraintSet, ErmProblem, Head};
use crate::error::{invalid, Error, Result};
use crate::features::standard_normal_matrix;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    RandomNet,
    SolutionCloud,
    Explicit,
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    points: Vec<DMatrix<f64>>,
    construction: Construction,
    alpha: f64,
}

/// Number of distinct radii in the solution-cloud schedule before it cycles.
const CLOUD_LEVELS: usize = 8;

impl CandidateSet {
    pub fn explicit(points: Vec<DMatrix<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("candidate set must contain at least one point"));
        }
        Ok(Self {
            points,
            construction: Construction::Explicit,
            alpha: 0.0,
        })
    }

    /// `count` Gaussian draws with entry variance `R²/p`, projected into the set.
    pub fn random_net(set: &ConstraintSet, p: usize, k: usize, count: usize, alpha: f64, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(invalid("candidate set must contain at least one point"));
        }
        let scale = set.radius / (p as f64).sqrt();
        let points = (0..count)
            .map(|m| set.project(&(standard_normal_matrix(p, k, derive_seed(seed, &[m as u64])) * scale)))
            .collect();
        Ok(Self {
            points,
            construction: Construction::RandomNet,
            alpha,
        })
    }

    /// `center` plus `count - 1` projected perturbations with Frobenius radii
    /// `α, α/2, α/4, …` (cycling after eight halvings).
    pub fn solution_cloud(center: &DMatrix<f64>, set: &ConstraintSet, count: usize, alpha: f64, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(invalid("candidate set must contain at least one point"));
        }
        let (p, k) = center.shape();
        let mut points = Vec::with_capacity(count);
        points.push(set.project(center));
        for j in 1..count {
            let radius = alpha / 2f64.powi(((j - 1) % CLOUD_LEVELS) as i32);
            let dir = standard_normal_matrix(p, k, derive_seed(seed, &[j as u64]));
            let norm = dir.norm().max(f64::MIN_POSITIVE);
            points.push(set.project(&(center + dir * (radius / norm))));
        }
        Ok(Self {
            points,
            construction: Construction::SolutionCloud,
            alpha,
        })
    }

    pub fn points(&self) -> &[DMatrix<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Empirical risks of every candidate.
    pub fn risks(&self, problem: &ErmProblem, x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
        self.points.iter().map(|t| train_risk(problem, t, x, y)).collect()
    }
}

/// `-(1/(nβ)) log Σ_m exp(-β n v_m)` via a max-shifted log-sum-exp.
pub fn free_energy_from_values(values: &[f64], n: usize, beta: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("free energy of an empty candidate set"));
    }
    if !(beta > 0.0) || n == 0 {
        return Err(invalid("free energy needs beta > 0 and n ≥ 1"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = beta * n as f64;
    // every term is in (0, 1] and the minimizer contributes exactly 1
    let sum: f64 = values.iter().map(|v| (-scale * (v - min)).exp()).sum();
    Ok(min - sum.ln() / scale)
}

pub fn free_energy(candidates: &CandidateSet, problem: &ErmProblem, x: &DMatrix<f64>, y: &[f64], beta: f64) -> Result<f64> {
    let values = candidates.risks(problem, x, y)?;
    free_energy_from_values(&values, x.nrows(), beta)
}

/// `U_t = sin(t) X + cos(t) G` on a grid in `[0, π/2]`.
#[derive(Debug, Clone)]
pub struct InterpolationPath {
    x: DMatrix<f64>,
    g: DMatrix<f64>,
    grid: Vec<f64>,
}

fn path_weights(t: f64) -> (f64, f64) {
    if t == 0.0 {
        (0.0, 1.0)
    } else if t == std::f64::consts::FRAC_PI_2 {
        (1.0, 0.0)
    } else {
        (t.sin(), t.cos())
    }
}

impl InterpolationPath {
    pub fn new(x: DMatrix<f64>, g: DMatrix<f64>, grid: Vec<f64>) -> Result<Self> {
        if x.shape() != g.shape() {
            return Err(invalid("X and G must have the same shape"));
        }
        if grid.is_empty() {
            return Err(invalid("path grid is empty"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("path grid must be strictly ascending"));
        }
        if grid[0] < 0.0 || *grid.last().unwrap() > std::f64::consts::FRAC_PI_2 {
            return Err(invalid("path grid must lie in [0, π/2]"));
        }
        Ok(Self { x, g, grid })
    }

    /// `count` evenly spaced points from 0 to π/2 inclusive.
    pub fn uniform_grid(count: usize) -> Vec<f64> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        match count {
            0 => vec![],
            1 => vec![0.0],
            _ => (0..count)
                .map(|i| if i + 1 == count { half_pi } else { half_pi * i as f64 / (count - 1) as f64 })
                .collect(),
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `U_t`; equals `G` at `t = 0` and `X` at `t = π/2` exactly.
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let (s, c) = path_weights(t);
        if c == 0.0 {
            return self.x.clone();
        }
        if s == 0.0 {
            return self.g.clone();
        }
        &self.x * s + &self.g * c
    }

    /// `Ũ_t = cos(t) X - sin(t) G`, the path derivative.
    pub fn derivative_at(&self, t: f64) -> DMatrix<f64> {
        let (s, c) = path_weights(t);
        &self.x * c - &self.g * s
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub f: f64,
    /// `|Δf/Δt|` over the segment ending at this point (zero for the first).
    pub segment_slope: f64,
}

/// Free energy along the path, with labels `y(U_t) = η(U_t Θ*, ε)` recomputed
/// at each `t` from the same noise vector `eps`.
pub fn free_energy_path(
    path: &InterpolationPath,
    candidates: &CandidateSet,
    problem: &ErmProblem,
    eps: &[f64],
    beta: f64,
) -> Result<Vec<PathPoint>> {
    let values: Vec<Result<f64>> = path
        .grid
        .par_iter()
        .map(|&t| {
            let u = path.at(t);
            let y = problem.labels_from_noise(&u, eps)?;
            free_energy(candidates, problem, &u, &y, beta)
        })
        .collect();
    let mut out: Vec<PathPoint> = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        let f = v?;
        let t = path.grid[i];
        let segment_slope = match out.last() {
            Some(prev) => ((f - prev.f) / (t - prev.t)).abs(),
            None => 0.0,
        };
        out.push(PathPoint { t, f, segment_slope });
    }
    Ok(out)
}

/// Upper bound on `sup_t |df/dt|` along the path for Lipschitz losses and
/// the identity head:
/// `L_ℓ (‖X‖_op + ‖G‖_op) (max_m ‖Θ_m‖ + L_η ‖Θ*‖) / √n`.
/// `None` when the loss has no global Lipschitz constant.
pub fn path_slope_bound(path: &InterpolationPath, candidates: &CandidateSet, problem: &ErmProblem) -> Option<f64> {
    let lip = problem.loss.lipschitz()?;
    if problem.head != Head::Identity {
        return None;
    }
    let n = path.x.nrows() as f64;
    let data = operator_norm(&path.x) + operator_norm(&path.g);
    let theta_max = candidates.points().iter().map(|t| t.norm()).fold(0.0, f64::max);
    let star = problem.labeler.lipschitz_v() * problem.theta_star.norm();
    Some(lip * data * (theta_max + star) / n.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub beta: f64,
    pub f: f64,
    pub lower: f64,
    pub upper: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    /// β values where the sandwich or monotonicity failed.
    pub violations: Vec<f64>,
}

impl SandwichReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check `min - log(M)/(nβ) ≤ f(β) ≤ min` for each β and that `f` does not
/// decrease along the ascending grid (up to a few ulps).
pub fn entropy_sandwich_check(
    candidates: &CandidateSet,
    problem: &ErmProblem,
    x: &DMatrix<f64>,
    y: &[f64],
    beta_grid: &[f64],
) -> Result<SandwichReport> {
    let values = candidates.risks(problem, x, y)?;
    sandwich_from_values(&values, x.nrows(), beta_grid)
}

pub fn sandwich_from_values(values: &[f64], n: usize, beta_grid: &[f64]) -> Result<SandwichReport> {
    if beta_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("beta grid must be strictly ascending".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let log_m = (values.len() as f64).ln();
    let mut rows = Vec::with_capacity(beta_grid.len());
    let mut violations = Vec::new();
    let mut prev: Option<f64> = None;
    for &beta in beta_grid {
        let f = free_energy_from_values(values, n, beta)?;
        let lower = min - log_m / (beta * n as f64);
        let within = lower <= f && f <= min;
        let monotone = prev.is_none_or(|pf| f >= pf - 4.0 * f64::EPSILON * pf.abs().max(1.0));
        if !within || !monotone {
            violations.push(beta);
        }
        prev = Some(f);
        rows.push(SandwichRow { beta, f, lower, upper: min, within });
    }
    Ok(SandwichReport { rows, violations })
}
