//! Regularized ERM problems: losses, labelers, constraint sets, regularizers,
//! and the empirical risk with its gradient.

mod constraint;
mod ridge;
mod risk;
mod solver;

pub use constraint::{operator_norm, ConstraintKind, ConstraintSet};
pub use ridge::{solve_ridge_closed_form, RidgeSolution};
pub use risk::{test_risk, test_risks, RiskEstimate};
pub use solver::{minimize, solve_erm, ErmSolution, SolveStatus, SolverConfig};

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;

/// `log(1 + e^x)` without overflow.
pub(crate) fn log1pexp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    if x >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Loss {
    /// `log(1 + exp(-y ŷ))`
    Logistic,
    Huber { delta: f64 },
    /// `(ŷ - y)^2`; not globally Lipschitz.
    Squared,
    /// `δ² (sqrt(1 + (r/δ)²) - 1)` with `r = ŷ - y`.
    PseudoHuber { delta: f64 },
}

impl Loss {
    pub fn value(&self, yhat: f64, y: f64) -> f64 {
        match *self {
            Loss::Logistic => log1pexp(-y * yhat),
            Loss::Huber { delta } => {
                let r = (yhat - y).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * (r - 0.5 * delta)
                }
            }
            Loss::Squared => (yhat - y).powi(2),
            Loss::PseudoHuber { delta } => {
                let q = (yhat - y) / delta;
                delta * delta * ((1.0 + q * q).sqrt() - 1.0)
            }
        }
    }

    /// `∂ℓ/∂ŷ`.
    pub fn derivative(&self, yhat: f64, y: f64) -> f64 {
        match *self {
            Loss::Logistic => -y * sigmoid(-y * yhat),
            Loss::Huber { delta } => (yhat - y).clamp(-delta, delta),
            Loss::Squared => 2.0 * (yhat - y),
            Loss::PseudoHuber { delta } => {
                let r = yhat - y;
                r / (1.0 + (r / delta).powi(2)).sqrt()
            }
        }
    }

    /// Global Lipschitz modulus in `(ŷ, y)` jointly, when one exists.
    pub fn lipschitz(&self) -> Option<f64> {
        match *self {
            Loss::Huber { delta } | Loss::PseudoHuber { delta } => Some(delta),
            Loss::Logistic | Loss::Squared => None,
        }
    }

    pub fn is_lipschitz(&self) -> bool {
        !matches!(self, Loss::Squared)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Loss::Huber { delta } | Loss::PseudoHuber { delta } if !(delta > 0.0) => {
                Err(invalid("loss delta must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Output map `F: R^k → R` applied before the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Head {
    /// `F(u) = u`, requires `k = 1`.
    Identity,
    /// `F(u) = sum_j a_j tanh(u_j)`.
    TanhSum { weights: Vec<f64> },
}

impl Head {
    pub fn arity(&self) -> Option<usize> {
        match self {
            Head::Identity => Some(1),
            Head::TanhSum { weights } => Some(weights.len()),
        }
    }

    pub fn is_convex(&self) -> bool {
        matches!(self, Head::Identity)
    }

    fn apply(&self, u: &[f64]) -> f64 {
        match self {
            Head::Identity => u[0],
            Head::TanhSum { weights } => weights.iter().zip(u).map(|(a, v)| a * v.tanh()).sum(),
        }
    }

    /// `∂F/∂u_j` written into `out`.
    fn gradient(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Head::Identity => out[0] = 1.0,
            Head::TanhSum { weights } => {
                for ((o, a), v) in out.iter_mut().zip(weights).zip(u) {
                    let t = v.tanh();
                    *o = a * (1.0 - t * t);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EtaKind {
    /// `η(v, ε) = v + τ ε`
    Linear,
    /// `η(v, ε) = clip(v, ±bound) + τ ε`
    ClippedLinear { bound: f64 },
    /// `η(v, ε) = tanh(v / scale) + τ ε`
    SignSmooth { scale: f64 },
}

/// Label map `y = η(Θ*ᵀx, ε)`. For `k* > 1` the index is the sum of the
/// projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labeler {
    pub eta: EtaKind,
    pub tau: f64,
    pub noise_law: NoiseLaw,
}

impl Labeler {
    pub fn eta(&self, v: f64, eps: f64) -> f64 {
        let base = match self.eta {
            EtaKind::Linear => v,
            EtaKind::ClippedLinear { bound } => v.clamp(-bound, bound),
            EtaKind::SignSmooth { scale } => (v / scale).tanh(),
        };
        base + self.tau * eps
    }

    /// Lipschitz modulus of `η` in `v`.
    pub fn lipschitz_v(&self) -> f64 {
        match self.eta {
            EtaKind::Linear | EtaKind::ClippedLinear { .. } => 1.0,
            EtaKind::SignSmooth { scale } => 1.0 / scale,
        }
    }

    /// Lipschitz modulus of `η` in `ε`.
    pub fn lipschitz_eps(&self) -> f64 {
        self.tau.abs()
    }

    pub fn draw_noise(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| match self.noise_law {
                NoiseLaw::Gaussian => StandardNormal.sample(&mut rng),
                NoiseLaw::Rademacher => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(invalid("noise scale tau must be nonnegative"));
        }
        match self.eta {
            EtaKind::ClippedLinear { bound } if !(bound > 0.0) => Err(invalid("clip bound must be positive")),
            EtaKind::SignSmooth { scale } if !(scale > 0.0) => Err(invalid("sign-smooth scale must be positive")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Regularizer {
    /// `λ ‖Θ‖_F²`
    Ridge { lambda: f64 },
    None,
}

impl Regularizer {
    pub fn value(&self, theta: &DMatrix<f64>) -> f64 {
        match *self {
            Regularizer::Ridge { lambda } => lambda * theta.norm_squared(),
            Regularizer::None => 0.0,
        }
    }

    pub fn add_gradient(&self, theta: &DMatrix<f64>, grad: &mut DMatrix<f64>) {
        if let Regularizer::Ridge { lambda } = *self {
            grad.zip_apply(theta, |g, t| *g += 2.0 * lambda * t);
        }
    }

    /// Strong convexity modulus.
    pub fn strong_convexity(&self) -> f64 {
        match *self {
            Regularizer::Ridge { lambda } => 2.0 * lambda,
            Regularizer::None => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErmProblem {
    pub loss: Loss,
    pub head: Head,
    pub labeler: Labeler,
    /// `p × k*` ground truth.
    pub theta_star: DMatrix<f64>,
    pub regularizer: Regularizer,
    pub constraint: ConstraintSet,
    pub k: usize,
}

impl ErmProblem {
    pub fn new(
        loss: Loss,
        head: Head,
        labeler: Labeler,
        theta_star: DMatrix<f64>,
        regularizer: Regularizer,
        constraint: ConstraintSet,
    ) -> Result<Self> {
        loss.validate()?;
        labeler.validate()?;
        if let Regularizer::Ridge { lambda } = regularizer {
            if !(lambda >= 0.0) {
                return Err(invalid("ridge lambda must be nonnegative"));
            }
        }
        let k = head.arity().unwrap_or(1);
        if k == 0 {
            return Err(invalid("head must have at least one input"));
        }
        if theta_star.ncols() == 0 || theta_star.nrows() == 0 {
            return Err(invalid("theta_star must be a non-empty p × k* matrix"));
        }
        for j in 0..theta_star.ncols() {
            let col: Vec<f64> = theta_star.column(j).iter().copied().collect();
            if !constraint.contains(&col, 1e-9) {
                return Err(invalid(format!("theta_star column {j} lies outside the constraint set")));
            }
        }
        if !loss.is_lipschitz() {
            log::warn!("squared loss is not globally Lipschitz; results are flagged");
        }
        Ok(Self {
            loss,
            head,
            labeler,
            theta_star,
            regularizer,
            constraint,
            k,
        })
    }

    pub fn p(&self) -> usize {
        self.theta_star.nrows()
    }

    pub fn is_convex(&self) -> bool {
        self.head.is_convex()
    }

    /// Flags attached to every result produced under this problem.
    pub fn flags(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if !self.loss.is_lipschitz() {
            f.push("non-lipschitz-loss");
        }
        f
    }

    fn check_width(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                context: "feature columns vs theta_star rows",
                expected: self.p(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Labels `η(Θ*ᵀx_i, ε_i)` for given noise draws.
    pub fn labels_from_noise(&self, x: &DMatrix<f64>, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        if eps.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "noise length vs samples",
                expected: x.nrows(),
                got: eps.len(),
            });
        }
        let v = x * &self.theta_star;
        Ok((0..x.nrows())
            .map(|i| self.labeler.eta(v.row(i).sum(), eps[i]))
            .collect())
    }

    /// Loss at one sample given the `k` projections `u`.
    pub fn sample_loss(&self, u: &[f64], y: f64) -> f64 {
        self.loss.value(self.head.apply(u), y)
    }

    /// Empirical data term `(1/n) Σ ℓ(Θᵀx_i; y_i)` and its gradient.
    pub fn data_term(&self, theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], want_grad: bool) -> (f64, Option<DMatrix<f64>>) {
        let n = x.nrows();
        let k = self.k;
        let u = x * theta;
        let mut total = 0.0;
        let mut dloss = if want_grad { Some(DMatrix::zeros(n, k)) } else { None };
        let mut row = vec![0.0; k];
        let mut hg = vec![0.0; k];
        for i in 0..n {
            for (j, r) in row.iter_mut().enumerate() {
                *r = u[(i, j)];
            }
            let f = self.head.apply(&row);
            total += self.loss.value(f, y[i]);
            if let Some(d) = dloss.as_mut() {
                let dl = self.loss.derivative(f, y[i]);
                self.head.gradient(&row, &mut hg);
                for j in 0..k {
                    d[(i, j)] = dl * hg[j];
                }
            }
        }
        let nf = n.max(1) as f64;
        let grad = dloss.map(|d| {
            let mut g = x.transpose() * d;
            g /= nf;
            g
        });
        (total / nf, grad)
    }
}

/// `y_i = η(Θ*ᵀx_i, ε_i)` with fresh noise drawn from `seed`.
pub fn generate_labels(problem: &ErmProblem, x: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
    let eps = problem.labeler.draw_noise(x.nrows(), seed);
    problem.labels_from_noise(x, &eps)
}

/// `(1/n) Σ ℓ(Θᵀx_i; y_i) + r(Θ)`.
pub fn train_risk(problem: &ErmProblem, theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    check_shapes(problem, theta, x, y)?;
    Ok(problem.data_term(theta, x, y, false).0 + problem.regularizer.value(theta))
}

/// Value and gradient of [`train_risk`].
pub fn train_risk_grad(problem: &ErmProblem, theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64]) -> Result<(f64, DMatrix<f64>)> {
    check_shapes(problem, theta, x, y)?;
    let (v, g) = problem.data_term(theta, x, y, true);
    let mut g = g.expect("gradient requested");
    problem.regularizer.add_gradient(theta, &mut g);
    Ok((v + problem.regularizer.value(theta), g))
}

fn check_shapes(problem: &ErmProblem, theta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    problem.check_width(x)?;
    if theta.shape() != (problem.p(), problem.k) {
        return Err(invalid(format!(
            "theta has shape {:?}, expected ({}, {})",
            theta.shape(),
            problem.p(),
            problem.k
        )));
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "labels vs samples",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    Ok(())
}

/// A weighted sum of empirical data terms plus the problem's regularizer:
/// `Σ_t w_t (1/n_t) Σ_i ℓ(Θᵀx_{t,i}; y_{t,i}) + r(Θ)`.
pub struct ErmObjective<'a> {
    pub problem: &'a ErmProblem,
    pub terms: Vec<DataTerm<'a>>,
}

pub struct DataTerm<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub weight: f64,
}

impl<'a> ErmObjective<'a> {
    pub fn train(problem: &'a ErmProblem, x: &'a DMatrix<f64>, y: &'a [f64]) -> Self {
        Self {
            problem,
            terms: vec![DataTerm { x, y, weight: 1.0 }],
        }
    }
}

/// Smooth objective over `p × k` parameter matrices.
pub trait Objective: Sync {
    fn value(&self, theta: &DMatrix<f64>) -> f64;
    fn value_grad(&self, theta: &DMatrix<f64>) -> (f64, DMatrix<f64>);
}

impl Objective for ErmObjective<'_> {
    fn value(&self, theta: &DMatrix<f64>) -> f64 {
        let data: f64 = self
            .terms
            .iter()
            .map(|t| t.weight * self.problem.data_term(theta, t.x, t.y, false).0)
            .sum();
        data + self.problem.regularizer.value(theta)
    }

    fn value_grad(&self, theta: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let mut grad = DMatrix::zeros(theta.nrows(), theta.ncols());
        let mut value = 0.0;
        for t in &self.terms {
            let (v, g) = self.problem.data_term(theta, t.x, t.y, true);
            value += t.weight * v;
            grad += g.expect("gradient requested") * t.weight;
        }
        self.problem.regularizer.add_gradient(theta, &mut grad);
        (value + self.problem.regularizer.value(theta), grad)
    }
}
