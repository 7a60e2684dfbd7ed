use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ErmProblem;
use crate::error::{invalid, Result};
use crate::rng::derive_seed;
use crate::source::FeatureSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    /// Jackknife standard error; for a sample mean this is `s/√n`.
    pub se: f64,
}

impl RiskEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        // shifted by the first value, so constant samples are reproduced exactly
        let shift = values[0];
        let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, se: 0.0 };
        }
        let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let se = (ss / ((n - 1) as f64 * n as f64)).sqrt();
        Self { mean, se }
    }
}

/// Monte Carlo estimate of `E[ℓ(Θᵀx; η(Θ*ᵀx, ε))]` for `x` drawn from
/// `source`. Features come from `seed`, noise from a derived stream.
pub fn test_risk(
    problem: &ErmProblem,
    theta: &DMatrix<f64>,
    source: &dyn FeatureSource,
    n_test: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    Ok(test_risks(problem, &[theta], source, n_test, seed)?[0])
}

/// [`test_risk`] for several parameters on one shared test draw.
pub fn test_risks(
    problem: &ErmProblem,
    thetas: &[&DMatrix<f64>],
    source: &dyn FeatureSource,
    n_test: usize,
    seed: u64,
) -> Result<Vec<RiskEstimate>> {
    let (p, k) = (problem.p(), problem.k);
    if source.dim() != p || thetas.iter().any(|t| t.shape() != (p, k)) {
        return Err(invalid("test_risk: parameter and source dimensions disagree"));
    }
    if n_test == 0 {
        return Err(invalid("test_risk needs n_test ≥ 1"));
    }
    let ks = problem.theta_star.ncols();
    let q = thetas.len();
    let mut dirs = DMatrix::zeros(p, q * k + ks);
    for (j, t) in thetas.iter().enumerate() {
        dirs.columns_mut(j * k, k).copy_from(*t);
    }
    dirs.columns_mut(q * k, ks).copy_from(&problem.theta_star);
    let proj = source.sample_projections(&dirs, n_test, seed)?;
    let eps = problem.labeler.draw_noise(n_test, derive_seed(seed, &[0x7E57]));
    let labels: Vec<f64> = (0..n_test)
        .map(|i| {
            let vstar: f64 = (0..ks).map(|j| proj[(i, q * k + j)]).sum();
            problem.labeler.eta(vstar, eps[i])
        })
        .collect();
    let mut u = vec![0.0; k];
    Ok((0..q)
        .map(|t| {
            let losses: Vec<f64> = (0..n_test)
                .map(|i| {
                    for (j, v) in u.iter_mut().enumerate() {
                        *v = proj[(i, t * k + j)];
                    }
                    problem.sample_loss(&u, labels[i])
                })
                .collect();
            RiskEstimate::from_samples(&losses)
        })
        .collect())
}
