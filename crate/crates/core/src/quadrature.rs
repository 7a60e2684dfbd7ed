//! Gauss–Hermite rules for expectations under the standard normal law, and
//! expansions in the orthonormal (probabilists') Hermite basis.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Result};

/// Nodes and weights such that `sum_i w_i f(x_i) ≈ E[f(G)]`, `G ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Rule with `order` nodes from the eigen-decomposition of the Jacobi
    /// matrix of the probabilists' Hermite recurrence (Golub–Welsch),
    /// symmetrized about zero.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("Gauss-Hermite order must be positive"));
        }
        let n = order;
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = eig
            .eigenvalues
            .iter()
            .zip(eig.eigenvectors.row(0).iter())
            .map(|(&x, &v)| (x, v * v))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -x;
            nodes[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(G)]` for `G ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// `E[f(U, V)]` for standard bivariate normal `(U, V)` with correlation
    /// `rho`, by the tensor rule on `U = G1`, `V = rho G1 + sqrt(1-rho^2) G2`.
    pub fn expect_pair(&self, rho: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
        let comp = (1.0 - rho * rho).max(0.0).sqrt();
        let mut acc = 0.0;
        for (&x1, &w1) in self.nodes.iter().zip(&self.weights) {
            let mut inner = 0.0;
            for (&x2, &w2) in self.nodes.iter().zip(&self.weights) {
                inner += w2 * f(x1, rho * x1 + comp * x2);
            }
            acc += w1 * inner;
        }
        acc
    }
}

/// Orthonormal probabilists' Hermite polynomials `h_0..=h_degree` at `x`,
/// with `E[h_j(G) h_k(G)] = δ_jk`.
pub fn hermite_basis(x: f64, degree: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(degree + 1);
    h.push(1.0);
    if degree >= 1 {
        h.push(x);
    }
    for k in 1..degree {
        let kf = k as f64;
        let next = (x * h[k] - kf.sqrt() * h[k - 1]) / (kf + 1.0).sqrt();
        h.push(next);
    }
    h
}

/// Evaluate `sum_k coeffs[k] h_k(x)` and its derivative.
pub fn hermite_series(coeffs: &[f64], x: f64) -> (f64, f64) {
    if coeffs.is_empty() {
        return (0.0, 0.0);
    }
    let h = hermite_basis(x, coeffs.len() - 1);
    let value = coeffs.iter().zip(&h).map(|(c, v)| c * v).sum();
    // h_k' = sqrt(k) h_{k-1}
    let deriv = coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| c * (k as f64).sqrt() * h[k - 1])
        .sum();
    (value, deriv)
}

/// Coefficients `c_k = E[f(G) h_k(G)]` for `k = 0..=degree`.
pub fn hermite_coefficients(
    rule: &GaussHermite,
    degree: usize,
    f: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut c = vec![0.0; degree + 1];
    for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
        let fx = w * f(x);
        for (ck, hk) in c.iter_mut().zip(hermite_basis(x, degree)) {
            *ck += fx * hk;
        }
    }
    c
}
