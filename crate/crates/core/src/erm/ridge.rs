use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub theta: DVector<f64>,
    pub objective: f64,
}

/// Minimizer of `(1/n)‖Xθ - y‖² + λ‖θ‖²`, i.e. the solution of
/// `(XᵀX/n + λI) θ = Xᵀy/n`.
pub fn solve_ridge_closed_form(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<RidgeSolution> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "ridge labels",
            expected: n,
            got: y.len(),
        });
    }
    if n == 0 || lambda < 0.0 {
        return Err(Error::InvalidArgument("ridge needs n ≥ 1 and λ ≥ 0".into()));
    }
    let nf = n as f64;
    let yv = DVector::from_column_slice(y);
    let mut gram = x.transpose() * x / nf;
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let rhs = x.transpose() * &yv / nf;
    let theta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let jitter = 1e-12 * gram.trace().abs().max(1.0) / p.max(1) as f64;
            for i in 0..p {
                gram[(i, i)] += jitter;
            }
            gram.cholesky()
                .ok_or_else(|| Error::LinearSolve(format!("normal equations singular even with jitter {jitter:e}")))?
                .solve(&rhs)
        }
    };
    let resid = x * &theta - &yv;
    let objective = resid.norm_squared() / nf + lambda * theta.norm_squared();
    Ok(RidgeSolution { theta, objective })
}
