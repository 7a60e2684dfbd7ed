//! Risks perturbed by a frozen Gaussian test term, and minimum test risk
//! over near-minimizers of the training risk.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::erm::{
    minimize, solve_erm, test_risk, train_risk, ErmProblem, ErmSolution, Objective, RiskEstimate, SolverConfig,
};
use crate::error::{invalid, Error, Result};
use crate::rng::derive_seed;
use crate::source::FeatureSource;

/// The test-risk term: an empirical risk on a frozen sample, or a constant.
#[derive(Debug, Clone)]
pub enum TestTerm {
    Frozen { g: DMatrix<f64>, y: Vec<f64> },
    Constant(f64),
}

impl TestTerm {
    /// Draw `n_test` rows from `source` with labels from the problem's labeler.
    pub fn draw(problem: &ErmProblem, source: &dyn FeatureSource, n_test: usize, seed: u64) -> Result<Self> {
        if n_test == 0 {
            return Err(invalid("frozen test term needs n_test ≥ 1"));
        }
        let g = source.sample(n_test, seed)?;
        let eps = problem.labeler.draw_noise(n_test, derive_seed(seed, &[0x7E57]));
        let y = problem.labels_from_noise(&g, &eps)?;
        Ok(TestTerm::Frozen { g, y })
    }

    pub fn value(&self, problem: &ErmProblem, theta: &DMatrix<f64>) -> f64 {
        match self {
            TestTerm::Frozen { g, y } => problem.data_term(theta, g, y, false).0,
            TestTerm::Constant(c) => *c,
        }
    }

    fn value_grad(&self, problem: &ErmProblem, theta: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        match self {
            TestTerm::Frozen { g, y } => {
                let (v, grad) = problem.data_term(theta, g, y, true);
                (v, grad.expect("gradient requested"))
            }
            TestTerm::Constant(c) => (*c, DMatrix::zeros(theta.nrows(), theta.ncols())),
        }
    }
}

/// `R̂_n(Θ) + s R̂^g_test(Θ)`.
struct PerturbedObjective<'a> {
    problem: &'a ErmProblem,
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    test: &'a TestTerm,
    s: f64,
}

impl Objective for PerturbedObjective<'_> {
    fn value(&self, theta: &DMatrix<f64>) -> f64 {
        self.problem.data_term(theta, self.x, self.y, false).0
            + self.problem.regularizer.value(theta)
            + self.s * self.test.value(self.problem, theta)
    }

    fn value_grad(&self, theta: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let (v, g) = self.problem.data_term(theta, self.x, self.y, true);
        let mut grad = g.expect("gradient requested");
        self.problem.regularizer.add_gradient(theta, &mut grad);
        let (tv, tg) = self.test.value_grad(self.problem, theta);
        grad += tg * self.s;
        (v + self.problem.regularizer.value(theta) + self.s * tv, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub s: f64,
    pub r_star: f64,
    /// `(R*_s - R*_0) / s`
    pub d: f64,
    /// Estimated suboptimality `‖G‖² / (2μ)` from the final gradient mapping.
    pub solver_gap: f64,
    pub quarantined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRiskSweep {
    pub r_star_0: f64,
    pub solver_gap_0: f64,
    /// Frozen-sample test risk at the unperturbed minimizer.
    pub test_at_theta0: f64,
    /// Fresh-sample estimate at the unperturbed minimizer.
    pub fresh_test_at_theta0: Option<RiskEstimate>,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichViolation {
    pub s: f64,
    pub d_pos: f64,
    pub d_neg: f64,
    pub center: f64,
    pub slack: f64,
}

impl PerturbedRiskSweep {
    pub fn d_at(&self, s: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.s == s)
    }

    /// Positive grid values in ascending order.
    pub fn positive_s(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.points.iter().map(|p| p.s).filter(|s| *s > 0.0).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    /// `D(s) ≤ R^g_test(θ̂₀) ≤ D(-s)` for each `s > 0`, with slack
    /// `2 (gap_s + gap_0) / s` on each side.
    pub fn sandwich_violations(&self) -> Vec<SandwichViolation> {
        self.positive_s()
            .into_iter()
            .filter_map(|s| {
                let pos = self.d_at(s)?;
                let neg = self.d_at(-s)?;
                let slack = 2.0 * (pos.solver_gap.max(neg.solver_gap) + self.solver_gap_0) / s;
                let ok = pos.d <= self.test_at_theta0 + slack && self.test_at_theta0 <= neg.d + slack;
                (!ok).then_some(SandwichViolation {
                    s,
                    d_pos: pos.d,
                    d_neg: neg.d,
                    center: self.test_at_theta0,
                    slack,
                })
            })
            .collect()
    }

    /// `(s, D(-s) - D(s))` for each positive `s`.
    pub fn spreads(&self) -> Vec<(f64, f64)> {
        self.positive_s()
            .into_iter()
            .filter_map(|s| Some((s, self.d_at(-s)?.d - self.d_at(s)?.d)))
            .collect()
    }
}

fn gap_estimate(sol: &ErmSolution, mu: f64) -> f64 {
    if mu > 0.0 {
        sol.grad_map_norm.powi(2) / (2.0 * mu)
    } else {
        sol.grad_map_norm
    }
}

fn check_s_grid(s_grid: &[f64]) -> Result<()> {
    if s_grid.is_empty() {
        return Err(invalid("s grid is empty"));
    }
    for &s in s_grid {
        if s == 0.0 || !s.is_finite() {
            return Err(invalid("s grid must exclude 0 and be finite"));
        }
        if !s_grid.contains(&-s) {
            return Err(invalid(format!("s grid is not symmetric: {s} has no mirror")));
        }
    }
    Ok(())
}

/// Minimize `R̂_n + s R̂^g_test` for each `s`, warm-started at the
/// unperturbed minimizer, and form the difference quotients.
pub fn perturbed_sweep(
    problem: &ErmProblem,
    x: &DMatrix<f64>,
    y: &[f64],
    test: &TestTerm,
    s_grid: &[f64],
    cfg: &SolverConfig,
) -> Result<PerturbedRiskSweep> {
    check_s_grid(s_grid)?;
    let mu = problem.regularizer.strong_convexity();
    let base = solve_erm(problem, x, y, cfg)?;
    let theta0 = base.theta_hat.clone();
    let r_star_0 = base.objective;
    let points = s_grid
        .iter()
        .map(|&s| {
            let obj = PerturbedObjective { problem, x, y, test, s };
            match minimize(&obj, &problem.constraint, &theta0, cfg) {
                Ok(sol) => Ok(SweepPoint {
                    s,
                    r_star: sol.objective,
                    d: (sol.objective - r_star_0) / s,
                    solver_gap: gap_estimate(&sol, mu),
                    quarantined: false,
                }),
                Err(Error::SolverDiverged { .. }) => Ok(SweepPoint {
                    s,
                    r_star: f64::NAN,
                    d: f64::NAN,
                    solver_gap: f64::NAN,
                    quarantined: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbedRiskSweep {
        r_star_0,
        solver_gap_0: gap_estimate(&base, mu),
        test_at_theta0: test.value(problem, &theta0),
        fresh_test_at_theta0: None,
        points,
    })
}

/// [`perturbed_sweep`] with the test term drawn from `source`, plus a
/// fresh-sample test risk of the unperturbed minimizer.
pub fn perturbed_sweep_with_source(
    problem: &ErmProblem,
    x: &DMatrix<f64>,
    y: &[f64],
    source: &dyn FeatureSource,
    s_grid: &[f64],
    n_test: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<PerturbedRiskSweep> {
    let test = TestTerm::draw(problem, source, n_test, seed)?;
    let mut sweep = perturbed_sweep(problem, x, y, &test, s_grid, cfg)?;
    let theta0 = solve_erm(problem, x, y, cfg)?.theta_hat;
    sweep.fresh_test_at_theta0 = Some(test_risk(problem, &theta0, source, n_test, derive_seed(seed, &[1]))?);
    Ok(sweep)
}

/// `R̂^g_test(Θ) + w max(0, R̂_n(Θ) - t)²`.
struct PenaltyObjective<'a> {
    problem: &'a ErmProblem,
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    test: &'a TestTerm,
    t: f64,
    w: f64,
}

impl Objective for PenaltyObjective<'_> {
    fn value(&self, theta: &DMatrix<f64>) -> f64 {
        let excess = (self.problem.data_term(theta, self.x, self.y, false).0 + self.problem.regularizer.value(theta)
            - self.t)
            .max(0.0);
        self.test.value(self.problem, theta) + self.w * excess * excess
    }

    fn value_grad(&self, theta: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let (tv, mut grad) = self.test.value_grad(self.problem, theta);
        if !self.t.is_finite() {
            return (tv, grad);
        }
        let (dv, dg) = self.problem.data_term(theta, self.x, self.y, true);
        let excess = (dv + self.problem.regularizer.value(theta) - self.t).max(0.0);
        if excess > 0.0 {
            let mut rg = dg.expect("gradient requested");
            self.problem.regularizer.add_gradient(theta, &mut rg);
            grad += rg * (2.0 * self.w * excess);
        }
        (tv + self.w * excess * excess, grad)
    }
}

pub const PENALTY_WEIGHTS: [f64; 4] = [10.0, 1e2, 1e3, 1e4];
pub const FEASIBILITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearMinResult {
    pub t: f64,
    /// Frozen-sample test risk of the returned point.
    pub test_risk: f64,
    pub train_risk: f64,
    /// `max(0, R̂_n - t)`
    pub residual: f64,
    pub infeasible: bool,
}

/// Largest step toward `target` from the feasible `anchor` that keeps
/// `R̂_n ≤ t` (bisection on the segment).
fn pull_back(
    problem: &ErmProblem,
    x: &DMatrix<f64>,
    y: &[f64],
    anchor: &DMatrix<f64>,
    target: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>> {
    let at = |a: f64| problem.constraint.project(&(anchor + (target - anchor) * a));
    if train_risk(problem, target, x, y)? <= t {
        return Ok(target.clone());
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if train_risk(problem, &at(mid), x, y)? <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(lo))
}

/// For each `t`, the smallest frozen test risk found over
/// `{Θ ∈ C_p : R̂_n(Θ) ≤ t}` by quadratic-penalty continuation warm-started
/// at the ERM solution. Levels are processed in ascending order and each
/// level's candidates include the previous level's answer, so the reported
/// minima are non-increasing in `t`.
pub fn min_test_over_near_minimizers(
    problem: &ErmProblem,
    x: &DMatrix<f64>,
    y: &[f64],
    test: &TestTerm,
    t_levels: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<NearMinResult>> {
    if t_levels.iter().any(|t| t.is_nan()) {
        return Err(invalid("t levels must not be NaN"));
    }
    let base = solve_erm(problem, x, y, cfg)?;
    let theta_hat = base.theta_hat;
    let r_star = train_risk(problem, &theta_hat, x, y)?;
    let mut order: Vec<usize> = (0..t_levels.len()).collect();
    order.sort_by(|&a, &b| t_levels[a].total_cmp(&t_levels[b]));
    let mut out: Vec<Option<NearMinResult>> = vec![None; t_levels.len()];
    let mut best_prev: Option<(DMatrix<f64>, f64)> = None;
    for idx in order {
        let t = t_levels[idx];
        let eval = |theta: &DMatrix<f64>| -> Result<(f64, f64)> {
            let tr = train_risk(problem, theta, x, y)?;
            Ok((test.value(problem, theta), (tr - t).max(0.0)))
        };
        let mut candidates: Vec<DMatrix<f64>> = vec![theta_hat.clone()];
        if let Some((prev, _)) = &best_prev {
            candidates.push(prev.clone());
        }
        let weights: &[f64] = if t.is_finite() { &PENALTY_WEIGHTS } else { &[0.0] };
        let mut start = best_prev.as_ref().map_or_else(|| theta_hat.clone(), |b| b.0.clone());
        for &w in weights {
            let obj = PenaltyObjective { problem, x, y, test, t, w };
            match minimize(&obj, &problem.constraint, &start, cfg) {
                Ok(sol) => {
                    let theta = sol.theta_hat;
                    if r_star <= t && t.is_finite() {
                        candidates.push(pull_back(problem, x, y, &theta_hat, &theta, t)?);
                    }
                    candidates.push(theta.clone());
                    start = theta;
                }
                Err(Error::SolverDiverged { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        let mut best: Option<(DMatrix<f64>, f64, f64)> = None;
        for c in candidates {
            let (v, res) = eval(&c)?;
            // exactly feasible points first, then lowest test risk
            if res <= FEASIBILITY_TOL && best.as_ref().is_none_or(|b| (res > 0.0, v) < (b.2 > 0.0, b.1)) {
                best = Some((c, v, res));
            }
        }
        out[idx] = Some(match best {
            Some((theta, v, res)) => {
                let tr = train_risk(problem, &theta, x, y)?;
                best_prev = Some((theta, v));
                NearMinResult { t, test_risk: v, train_risk: tr, residual: res, infeasible: false }
            }
            None => NearMinResult { t, test_risk: f64::NAN, train_risk: f64::NAN, residual: f64::NAN, infeasible: true },
        });
    }
    Ok(out.into_iter().map(|r| r.expect("every level processed")).collect())
}
