//! Fast self-checks at small sizes (n ≤ 400).

use std::time::Instant;

use nalgebra::DMatrix;

use super::run::trial_csv_bytes;
use crate::equiv::{CovMode, GaussianEquivalent, Provenance};
use crate::erm::{
    generate_labels, solve_erm, solve_ridge_closed_form, ConstraintSet, EtaKind, ErmProblem, Head, Labeler, Loss,
    NoiseLaw, Regularizer, SolverConfig,
};
use crate::error::Result;
use crate::features::standard_normal_matrix;
use crate::free_energy::{entropy_sandwich_check, CandidateSet};
use crate::quadrature::GaussHermite;
use crate::suite::perturbed::{perturbed_sweep, TestTerm};
use crate::suite::stats::{bootstrap_mean, DEFAULT_RESAMPLES};
use crate::suite::{build_instances, parse_trial_csv, run_trials, FamilySpec, ProblemSpec, TrialPlan};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn ridge_problem(p: usize, lambda: f64, radius: f64) -> Result<ErmProblem> {
    let mut star = DMatrix::zeros(p, 1);
    star[(0, 0)] = 1.0;
    ErmProblem::new(
        Loss::Squared,
        Head::Identity,
        Labeler { eta: EtaKind::Linear, tau: 0.5, noise_law: NoiseLaw::Gaussian },
        star,
        Regularizer::Ridge { lambda },
        ConstraintSet::l2_ball(radius),
    )
}

fn quadrature_moments() -> Result<(bool, String)> {
    let rule = GaussHermite::new(100)?;
    let errs = [
        (rule.expect(|_| 1.0) - 1.0).abs(),
        (rule.expect(|z| z * z) - 1.0).abs(),
        (rule.expect(|z| z.powi(4)) - 3.0).abs(),
        (rule.expect(|z| z.powi(6)) - 15.0).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    Ok((worst <= 1e-10, format!("max moment error {worst:.2e}")))
}

fn ridge_vs_closed_form() -> Result<(bool, String)> {
    let (n, p, lambda) = (200, 100, 0.1);
    let prob = ridge_problem(p, lambda, 1e6)?;
    let x = standard_normal_matrix(n, p, 11);
    let y = generate_labels(&prob, &x, 12)?;
    let exact = solve_ridge_closed_form(&x, &y, lambda)?;
    let pgd = solve_erm(&prob, &x, &y, &SolverConfig { tol: 1e-10, ..SolverConfig::default() })?;
    let rel = (pgd.objective - exact.objective).abs() / exact.objective.abs().max(1e-300);
    Ok((rel <= 1e-6, format!("relative objective gap {rel:.2e}")))
}

fn projections() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut feasible = true;
    for (i, set) in [ConstraintSet::l2_ball(1.5), ConstraintSet::linf_ball(0.3), ConstraintSet::nt_operator_ball(1.0, 6)]
        .into_iter()
        .enumerate()
    {
        let theta = standard_normal_matrix(24, 1, 100 + i as u64) * 2.0;
        let once = set.project(&theta);
        let twice = set.project(&once);
        worst = worst.max((&once - &twice).amax());
        feasible &= set.contains_matrix(&once, 1e-9);
    }
    Ok((feasible && worst <= 1e-9, format!("idempotence error {worst:.2e}, feasible {feasible}")))
}

fn sandwich() -> Result<(bool, String)> {
    let prob = ridge_problem(32, 0.1, 2.0)?;
    let x = standard_normal_matrix(64, 32, 21);
    let y = generate_labels(&prob, &x, 22)?;
    let cands = CandidateSet::random_net(&prob.constraint, 32, 1, 256, 0.1, 23)?;
    let report = entropy_sandwich_check(&cands, &prob, &x, &y, &[0.1, 1.0, 10.0, 100.0])?;
    Ok((report.is_ok(), format!("{} violations over {} betas", report.violations.len(), report.rows.len())))
}

fn perturbed() -> Result<(bool, String)> {
    let prob = ridge_problem(50, 0.1, 3.0)?;
    let x = standard_normal_matrix(100, 50, 31);
    let y = generate_labels(&prob, &x, 32)?;
    let source = GaussianEquivalent::from_factor(
        CovMode::LinearExact,
        DMatrix::identity(50, 50),
        Provenance { samples: None, quadrature_order: None, hermite_terms: None, jitter: 0.0, clipped_mass: 0.0 },
    );
    let test = TestTerm::draw(&prob, &source, 400, 33)?;
    let sweep = perturbed_sweep(&prob, &x, &y, &test, &[-0.1, -0.01, 0.01, 0.1], &SolverConfig::default())?;
    let v = sweep.sandwich_violations();
    Ok((v.is_empty(), format!("{} sandwich violations", v.len())))
}

fn control_campaign() -> Result<(bool, String)> {
    let families = vec![FamilySpec::control()];
    let instances = build_instances(&families, &ProblemSpec::default(), &[200], 7)?;
    let plan = TrialPlan { master_seed: 7, trials: 12, n_test: 400, solver: SolverConfig::default() };
    let a = run_trials(&instances, &plan)?;
    let b = run_trials(&instances, &plan)?;
    let bytes_a = trial_csv_bytes(&a)?;
    let deterministic = bytes_a == trial_csv_bytes(&b)?;
    let parsed = parse_trial_csv(std::str::from_utf8(&bytes_a).unwrap_or_default())?;
    let roundtrip = trial_csv_bytes(&parsed)? == bytes_a;
    let gaps: Vec<f64> = a.iter().map(|r| r.x.train_opt - r.g.train_opt).collect();
    let ci = bootstrap_mean(&gaps, DEFAULT_RESAMPLES, 0.95, 8)?;
    let covers = ci.covers(0.0);
    Ok((
        deterministic && roundtrip && covers,
        format!("deterministic {deterministic}, csv roundtrip {roundtrip}, null CI [{:.2e}, {:.2e}]", ci.lower, ci.upper),
    ))
}

/// Run every check; errors count as failures.
pub fn run_selftest() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Result<(bool, String)>); 6] = [
        ("quadrature-moments", quadrature_moments),
        ("ridge-closed-form", ridge_vs_closed_form),
        ("projection-idempotent", projections),
        ("entropy-sandwich", sandwich),
        ("perturbed-sandwich", perturbed),
        ("control-determinism", control_campaign),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let (passed, detail) = match f() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            Check { name, passed, detail, seconds: t.elapsed().as_secs_f64() }
        })
        .collect()
}
