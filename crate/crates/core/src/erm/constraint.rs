use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConstraintKind {
    /// `‖θ‖₂ ≤ R`
    L2Ball,
    /// `‖T_θ‖_op ≤ R/√d`, where `T_θ` is the d×m block matrix of `θ`.
    NtOperatorBall { d: usize },
    /// `‖θ‖_∞ ≤ R/√p`
    LinfBall,
}

/// Largest singular value, from the eigenvalues of the smaller Gram matrix.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = if a.nrows() <= a.ncols() { a * a.transpose() } else { a.transpose() * a };
    gram.symmetric_eigenvalues().iter().fold(0.0f64, |m, &v| m.max(v)).sqrt()
}

/// Symmetric convex constraint set applied to each column of `Θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub kind: ConstraintKind,
    pub radius: f64,
}

impl ConstraintSet {
    pub fn l2_ball(radius: f64) -> Self {
        Self {
            kind: ConstraintKind::L2Ball,
            radius,
        }
    }

    pub fn nt_operator_ball(radius: f64, d: usize) -> Self {
        Self {
            kind: ConstraintKind::NtOperatorBall { d },
            radius,
        }
    }

    pub fn linf_ball(radius: f64) -> Self {
        Self {
            kind: ConstraintKind::LinfBall,
            radius,
        }
    }

    /// The set's defining norm of `theta`, scaled so membership is
    /// `measure(theta) ≤ radius`.
    pub fn measure(&self, theta: &[f64]) -> f64 {
        let p = theta.len();
        match self.kind {
            ConstraintKind::L2Ball => theta.iter().map(|v| v * v).sum::<f64>().sqrt(),
            ConstraintKind::LinfBall => {
                theta.iter().fold(0.0f64, |m, v| m.max(v.abs())) * (p as f64).sqrt()
            }
            ConstraintKind::NtOperatorBall { d } => {
                let m = p / d;
                let t = DMatrix::from_column_slice(d, m, theta);
                operator_norm(&t) * (d as f64).sqrt()
            }
        }
    }

    pub fn contains(&self, theta: &[f64], tol: f64) -> bool {
        if let ConstraintKind::NtOperatorBall { d } = self.kind {
            if d == 0 || theta.len() % d != 0 {
                return false;
            }
        }
        self.measure(theta) <= self.radius + tol
    }

    /// Euclidean projection onto the set, in place.
    pub fn project_in_place(&self, theta: &mut [f64]) {
        let p = theta.len();
        if p == 0 {
            return;
        }
        match self.kind {
            ConstraintKind::L2Ball => {
                let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > self.radius {
                    let s = if norm > 0.0 { self.radius / norm } else { 0.0 };
                    theta.iter_mut().for_each(|v| *v *= s);
                }
            }
            ConstraintKind::LinfBall => {
                let b = self.radius / (p as f64).sqrt();
                theta.iter_mut().for_each(|v| *v = v.clamp(-b, b));
            }
            ConstraintKind::NtOperatorBall { d } => {
                assert!(d > 0 && p % d == 0, "parameter length {p} is not a multiple of d = {d}");
                let m = p / d;
                let bound = self.radius / (d as f64).sqrt();
                let t = DMatrix::from_column_slice(d, m, theta);
                // T = U S V^T with T T^T = U S² U^T; clipping S gives U diag(min(s, c)/s) U^T T
                let eig = (&t * t.transpose()).symmetric_eigen();
                let smax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v)).sqrt();
                if smax <= bound {
                    return;
                }
                let scale = eig.eigenvalues.map(|v| {
                    let s = v.max(0.0).sqrt();
                    if s > bound { bound / s } else { 1.0 }
                });
                let u = &eig.eigenvectors;
                let clipped = u * DMatrix::from_diagonal(&scale) * u.transpose() * &t;
                theta.copy_from_slice(clipped.as_slice());
            }
        }
    }

    pub fn project_vec(&self, theta: &[f64]) -> Vec<f64> {
        let mut v = theta.to_vec();
        self.project_in_place(&mut v);
        v
    }

    /// Column-wise projection of a `p × k` matrix.
    pub fn project(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = theta.clone();
        let p = out.nrows();
        for j in 0..out.ncols() {
            let start = j * p;
            self.project_in_place(&mut out.as_mut_slice()[start..start + p]);
        }
        out
    }

    pub fn contains_matrix(&self, theta: &DMatrix<f64>, tol: f64) -> bool {
        let p = theta.nrows();
        (0..theta.ncols()).all(|j| self.contains(&theta.as_slice()[j * p..(j + 1) * p], tol))
    }
}
