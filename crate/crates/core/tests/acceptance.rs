//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;

use ermu::equiv::{mc_covariance, rf_covariance_hermite, CovMode, GaussianEquivalent, Provenance};
use ermu::erm::{
    generate_labels, solve_erm, solve_ridge_closed_form, train_risk, train_risk_grad, ConstraintSet, EtaKind, ErmProblem,
    Head, Labeler, Loss, NoiseLaw, Regularizer, SolverConfig,
};
use ermu::features::{sample_sphere_weights, standard_normal_matrix, Activation, EntryLaw, FeatureModel, EXP_NEG_HALF};
use ermu::free_energy::{entropy_sandwich_check, free_energy_from_values, CandidateSet};
use ermu::harness::run::trial_csv_bytes;
use ermu::quadrature::GaussHermite;
use ermu::rng::{derive_seed, rng_from_seed};
use ermu::suite::perturbed::{perturbed_sweep, TestTerm};
use ermu::suite::{build_instances, build_report, run_trials, FamilySpec, ProblemSpec, ReportConfig, TrialPlan, TrialResult};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn labeler(tau: f64) -> Labeler {
    Labeler { eta: EtaKind::Linear, tau, noise_law: NoiseLaw::Gaussian }
}

fn unit_truth(p: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(p, 1);
    t[(0, 0)] = 1.0;
    t
}

fn identity_source(p: usize) -> GaussianEquivalent {
    GaussianEquivalent::from_factor(
        CovMode::LinearExact,
        DMatrix::identity(p, p),
        Provenance { samples: None, quadrature_order: None, hermite_terms: None, jitter: 0.0, clipped_mass: 0.0 },
    )
}

fn c1_moments() -> Outcome {
    let rule = GaussHermite::new(100).unwrap();
    let a = rule.expect(f64::tanh).abs();
    let b = rule.expect(|g| g.cos() - EXP_NEG_HALF).abs();
    let c = rule.expect(|g| g * (g.cos() - EXP_NEG_HALF)).abs();
    let worst = a.max(b).max(c);
    outcome(worst <= 1e-10, format!("E tanh {a:.1e}, E cos-shift {b:.1e}, E G cos-shift {c:.1e}"))
}

/// `E σ(U) σ(V)` for standard normals with correlation `rho`, by a tensor
/// rule on independent normals.
fn pair_expectation(rule: &GaussHermite, rho: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let s = (1.0 - rho * rho).max(0.0).sqrt();
    let (z, w) = (rule.nodes(), rule.weights());
    let mut acc = 0.0;
    for (a, wa) in z.iter().zip(w) {
        let fa = f(*a);
        let mut inner = 0.0;
        for (b, wb) in z.iter().zip(w) {
            inner += wb * f(rho * a + s * b);
        }
        acc += wa * fa * inner;
    }
    acc
}

fn c2_covariance_triangle() -> Outcome {
    let (d, p) = (32, 32);
    // odd degrees 1, 3, 5 of the tanh expansion
    let full = Activation::TanhRf.hermite_coefficients(5, &GaussHermite::new(100).unwrap());
    let coeffs: Vec<f64> = full.iter().enumerate().map(|(k, c)| if k % 2 == 1 { *c } else { 0.0 }).collect();
    let w = sample_sphere_weights(d, p, 2024).unwrap();
    let act = Activation::hermite(coeffs.clone());
    let herm = rf_covariance_hermite(&w, &coeffs, 5).unwrap();
    let rule = GaussHermite::new(200).unwrap();
    let sigma = |t: f64| act.value(t);
    let gram = w.transpose() * &w;
    let mut quad = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let rho = if i == j { 1.0 } else { gram[(i, j)] };
            let v = pair_expectation(&rule, rho, &sigma);
            quad[(i, j)] = v;
            quad[(j, i)] = v;
        }
    }
    let model = FeatureModel::random_features_with_weights(w, act).unwrap();
    let mc = mc_covariance(&model, 100_000, 77).unwrap();
    let hq = (&herm - &quad).amax();
    let hm = (&herm - &mc).amax();
    let qm = (&quad - &mc).amax();
    outcome(
        hq <= 1e-3 && hm <= 2e-2 && qm <= 2e-2,
        format!("hermite-quad {hq:.1e}, hermite-mc {hm:.1e}, quad-mc {qm:.1e}"),
    )
}

fn fd_relative_error(prob: &ErmProblem, x: &DMatrix<f64>, y: &[f64], theta: &DMatrix<f64>) -> f64 {
    let (_, grad) = train_risk_grad(prob, theta, x, y).unwrap();
    let h = 1e-6;
    let mut fd = DMatrix::zeros(theta.nrows(), theta.ncols());
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += h;
        minus[i] -= h;
        fd[i] = (train_risk(prob, &plus, x, y).unwrap() - train_risk(prob, &minus, x, y).unwrap()) / (2.0 * h);
    }
    (&grad - &fd).norm() / grad.norm().max(1e-12)
}

fn c3_ridge() -> Outcome {
    let (n, p, lambda) = (200, 100, 0.1);
    let prob = ErmProblem::new(
        Loss::Squared,
        Head::Identity,
        labeler(0.5),
        unit_truth(p),
        Regularizer::Ridge { lambda },
        ConstraintSet::l2_ball(1e6),
    )
    .unwrap();
    let x = standard_normal_matrix(n, p, 301);
    let y = generate_labels(&prob, &x, 302).unwrap();
    // oracle: direct LU solve of the normal equations
    let a = x.transpose() * &x / n as f64 + DMatrix::identity(p, p) * lambda;
    let b = x.transpose() * DMatrix::from_column_slice(n, 1, &y) / n as f64;
    let direct = a.lu().solve(&b).unwrap();
    let direct_obj = train_risk(&prob, &direct, &x, &y).unwrap();
    let closed = solve_ridge_closed_form(&x, &y, lambda).unwrap();
    let pgd = solve_erm(&prob, &x, &y, &SolverConfig { tol: 1e-10, ..SolverConfig::default() }).unwrap();
    let rel = (pgd.objective - direct_obj).abs() / direct_obj;
    let rel_closed = (closed.objective - direct_obj).abs() / direct_obj;

    let mut worst_fd: f64 = 0.0;
    let losses = [Loss::Squared, Loss::Logistic, Loss::Huber { delta: 1.0 }, Loss::PseudoHuber { delta: 0.7 }];
    let heads = [Head::Identity, Head::TanhSum { weights: vec![1.0, -0.5] }];
    for (li, loss) in losses.iter().enumerate() {
        for (hi, head) in heads.iter().enumerate() {
            let k = head.arity().unwrap();
            let q = 12;
            let prob = ErmProblem::new(
                *loss,
                head.clone(),
                labeler(0.3),
                unit_truth(q),
                Regularizer::Ridge { lambda },
                ConstraintSet::l2_ball(1e6),
            )
            .unwrap();
            let seed = derive_seed(303, &[li as u64, hi as u64]);
            let x = standard_normal_matrix(40, q, seed);
            let mut y = generate_labels(&prob, &x, seed + 1).unwrap();
            if matches!(loss, Loss::Logistic) {
                y.iter_mut().for_each(|v| *v = if *v >= 0.0 { 1.0 } else { -1.0 });
            }
            let theta = standard_normal_matrix(q, k, seed + 2) * 0.4;
            worst_fd = worst_fd.max(fd_relative_error(&prob, &x, &y, &theta));
        }
    }
    outcome(
        rel <= 1e-6 && rel_closed <= 1e-6 && worst_fd <= 1e-5,
        format!("pgd rel gap {rel:.1e}, closed-form rel gap {rel_closed:.1e}, worst fd rel err {worst_fd:.1e}"),
    )
}

/// `-(1/(nβ)) ln Σ exp(-βn v)`, summed in extended form after shifting by the minimum.
fn oracle_free_energy(values: &[f64], n: usize, beta: f64) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = values.iter().map(|v| (-(beta * n as f64) * (v - min)).exp()).sum();
    min - s.ln() / (beta * n as f64)
}

fn c4_free_energy() -> Outcome {
    let betas = [0.1, 1.0, 10.0, 100.0];
    let mut rng = rng_from_seed(404);
    let mut failures = Vec::new();
    let mut worst_oracle: f64 = 0.0;
    for inst in 0..20u64 {
        let n = rng.random_range(16..=128);
        let p = rng.random_range(4..=32);
        let m = rng.random_range(16..=512);
        let loss = if inst % 2 == 0 { Loss::Huber { delta: 1.0 } } else { Loss::Logistic };
        let set = if inst % 3 == 0 { ConstraintSet::linf_ball(0.5) } else { ConstraintSet::l2_ball(2.0) };
        let star = set.project(&(unit_truth(p) * 0.4));
        let prob = ErmProblem::new(loss, Head::Identity, labeler(0.5), star, Regularizer::Ridge { lambda: 0.1 }, set).unwrap();
        let x = standard_normal_matrix(n, p, derive_seed(405, &[inst]));
        let y = generate_labels(&prob, &x, derive_seed(406, &[inst])).unwrap();
        let cands = CandidateSet::random_net(&prob.constraint, p, 1, m, 0.1, derive_seed(407, &[inst])).unwrap();
        let values = cands.risks(&prob, &x, &y).unwrap();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let log_m = (values.len() as f64).ln();
        let fs: Vec<f64> = betas.iter().map(|&b| free_energy_from_values(&values, n, b).unwrap()).collect();
        for (f, &b) in fs.iter().zip(&betas) {
            worst_oracle = worst_oracle.max((f - oracle_free_energy(&values, n, b)).abs() / f.abs().max(1.0));
            if !(min - log_m / (n as f64 * b) <= *f && *f <= min) {
                failures.push(format!("instance {inst} beta {b}: bounds"));
            }
        }
        if fs.windows(2).any(|w| w[1] < w[0]) {
            failures.push(format!("instance {inst}: not monotone"));
        }
        if !entropy_sandwich_check(&cands, &prob, &x, &y, &betas).unwrap().is_ok() {
            failures.push(format!("instance {inst}: library check"));
        }
    }
    let ok = failures.is_empty() && worst_oracle <= 1e-12;
    let detail = if failures.is_empty() {
        format!("20 instances within bounds and monotone, oracle rel err {worst_oracle:.1e}")
    } else {
        failures.join("; ")
    };
    outcome(ok, detail)
}

fn c5_null_calibration() -> Outcome {
    let family = FamilySpec::control();
    let mut covered = 0;
    let mut lines = Vec::new();
    for rep in 0..20u64 {
        let seed = derive_seed(500, &[rep]);
        let instances = build_instances(std::slice::from_ref(&family), &ProblemSpec::default(), &[400], seed).unwrap();
        assert_eq!((instances[0].n, instances[0].p), (400, 300));
        let plan = TrialPlan { master_seed: seed, trials: 50, n_test: 2000, solver: SolverConfig::default() };
        let results = run_trials(&instances, &plan).unwrap();
        let report = build_report(&results, &ReportConfig { seed, ..ReportConfig::default() }).unwrap();
        let ci = &report.families[0].sizes[0].train_gap;
        if ci.covers(0.0) {
            covered += 1;
        } else {
            lines.push(format!("rep {rep} [{:.2e}, {:.2e}]", ci.lower, ci.upper));
        }
    }
    let mut detail = format!("CI covers 0 in {covered}/20 repetitions");
    if !lines.is_empty() {
        detail.push_str(&format!(" (missed: {})", lines.join(", ")));
    }
    outcome(covered >= 18, detail)
}

/// Two-sample KS statistic by direct evaluation at every sample point.
fn oracle_ks(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], t: f64| s.iter().filter(|v| **v <= t).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&t| (cdf(a, t) - cdf(b, t)).abs()).fold(0.0, f64::max)
}

fn universality_campaign() -> Vec<TrialResult> {
    let families = vec![FamilySpec::random_features(), FamilySpec::linear(EntryLaw::Rademacher)];
    let instances = build_instances(&families, &ProblemSpec::default(), &[200, 400, 800], 42).unwrap();
    let plan = TrialPlan { master_seed: 42, trials: 50, n_test: 2000, solver: SolverConfig::default() };
    run_trials(&instances, &plan).unwrap()
}

fn c6_universality(results: &[TrialResult]) -> Outcome {
    let report = build_report(results, &ReportConfig { seed: 42, ..ReportConfig::default() }).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in &report.families {
        let mut gaps = Vec::new();
        for s in &fam.sizes {
            let rows: Vec<&TrialResult> = results.iter().filter(|r| r.family == fam.family && r.n == s.n).collect();
            let mean = rows.iter().map(|r| r.x.train_opt - r.g.train_opt).sum::<f64>() / rows.len() as f64;
            ok &= (mean - s.train_gap.estimate).abs() <= 1e-12 * mean.abs().max(1e-3);
            gaps.push((mean.abs(), s.train_gap.se));
        }
        // non-increasing with at most one inversion of at most one SE
        let inversions: Vec<usize> = (0..gaps.len() - 1).filter(|&k| gaps[k + 1].0 > gaps[k].0).collect();
        let trend_ok = inversions.len() <= 1
            && inversions
                .iter()
                .all(|&k| gaps[k + 1].0 - gaps[k].0 <= gaps[k].1.hypot(gaps[k + 1].1));
        let last = fam.sizes.last().unwrap();
        let rows: Vec<&TrialResult> = results.iter().filter(|r| r.family == fam.family && r.n == last.n).collect();
        let xs: Vec<f64> = rows.iter().map(|r| r.x.train_opt).collect();
        let gs: Vec<f64> = rows.iter().map(|r| r.g.train_opt).collect();
        let ks = oracle_ks(&xs, &gs);
        let ks_ok = (ks - last.ks).abs() <= 1e-12 && ks < last.ks_null_q99;
        let within = last.train_gap.estimate.abs() <= 3.0 * last.train_gap.se;
        ok &= trend_ok && ks_ok && within && trend_ok == fam.trend.non_increasing;
        parts.push(format!(
            "{}: |gap| {} trend {}, n=800 |gap|/se {:.2}, KS {:.3} < q99 {:.3}",
            fam.family,
            gaps.iter().map(|g| format!("{:.1e}", g.0)).collect::<Vec<_>>().join("/"),
            if trend_ok { "ok" } else { "broken" },
            last.train_gap.estimate.abs() / last.train_gap.se,
            ks,
            last.ks_null_q99
        ));
    }
    outcome(ok, parts.join("; "))
}

fn sample_var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn c7_test_gap(results: &[TrialResult]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for family in ["linear-independent", "random-features"] {
        let rows: Vec<&TrialResult> = results.iter().filter(|r| r.family == family && r.n == 800).collect();
        let tx: Vec<f64> = rows.iter().map(|r| r.x.test_x.mean).collect();
        let tg: Vec<f64> = rows.iter().map(|r| r.g.test_g.mean).collect();
        let t = rows.len() as f64;
        let gap = (tx.iter().sum::<f64>() - tg.iter().sum::<f64>()) / t;
        let se = (sample_var(&tx) / t + sample_var(&tg) / t).sqrt();
        ok &= gap.abs() <= 3.0 * se;
        parts.push(format!("{family}: |gap| {:.2e} vs 3 SE {:.2e}", gap.abs(), 3.0 * se));
    }
    outcome(ok, parts.join("; "))
}

fn c8_convex_sandwich() -> Outcome {
    let (n, p, n_test, lambda) = (400, 100, 1000, 0.1);
    let grid = [-0.1, -0.01, 0.01, 0.1];
    let mut failures = Vec::new();
    let mut worst_oracle: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for inst in 0..20u64 {
        let prob = ErmProblem::new(
            Loss::Squared,
            Head::Identity,
            labeler(0.5),
            unit_truth(p),
            Regularizer::Ridge { lambda },
            ConstraintSet::l2_ball(1e6),
        )
        .unwrap();
        let x = standard_normal_matrix(n, p, derive_seed(800, &[inst]));
        let y = generate_labels(&prob, &x, derive_seed(801, &[inst])).unwrap();
        let test = TestTerm::draw(&prob, &identity_source(p), n_test, derive_seed(802, &[inst])).unwrap();
        let cfg = SolverConfig { tol: 1e-10, ..SolverConfig::default() };
        let sweep = perturbed_sweep(&prob, &x, &y, &test, &grid, &cfg).unwrap();
        let TestTerm::Frozen { g, y: yg } = &test else { unreachable!() };

        // oracle: the perturbed problem is a ridge problem in closed form
        let solve = |s: f64| {
            let a = x.transpose() * &x / n as f64 + DMatrix::identity(p, p) * lambda + g.transpose() * g * (s / n_test as f64);
            let b = x.transpose() * DMatrix::from_column_slice(n, 1, &y) / n as f64
                + g.transpose() * DMatrix::from_column_slice(n_test, 1, yg) * (s / n_test as f64);
            let th = a.cholesky().expect("perturbed system is positive definite").solve(&b);
            train_risk(&prob, &th, &x, &y).unwrap() + s * test.value(&prob, &th)
        };
        let r0 = solve(0.0);
        for pt in &sweep.points {
            let d_oracle = (solve(pt.s) - r0) / pt.s;
            worst_oracle = worst_oracle.max((pt.d - d_oracle).abs());
        }
        let violations = sweep.sandwich_violations();
        if !violations.is_empty() {
            failures.push(format!("instance {inst}: {} sandwich violations", violations.len()));
        }
        let spreads = sweep.spreads();
        let slack = |s: f64| {
            let g = |v: f64| sweep.d_at(v).unwrap().solver_gap;
            2.0 * (g(s).max(g(-s)) + sweep.solver_gap_0) / s
        };
        if spreads.iter().any(|&(s, w)| w < -slack(s)) {
            failures.push(format!("instance {inst}: negative spread"));
        }
        let (small, large) = (spreads[0], spreads[1]);
        if small.1 > large.1 + slack(small.0) {
            failures.push(format!("instance {inst}: spread grows as s shrinks"));
        }
        worst_ratio = worst_ratio.max(small.1 / large.1);
    }
    let ok = failures.is_empty() && worst_oracle <= 1e-6;
    let detail = if failures.is_empty() {
        format!("20 instances sandwiched, max spread(0.01)/spread(0.1) {worst_ratio:.3}, closed-form D err {worst_oracle:.1e}")
    } else {
        failures.join("; ")
    };
    outcome(ok, detail)
}

fn c9_neural_tangent() -> Outcome {
    let family = FamilySpec::neural_tangent();
    let instances = build_instances(std::slice::from_ref(&family), &ProblemSpec::default(), &[28], 9).unwrap();
    let inst = &instances[0];
    assert_eq!((inst.n, inst.p), (1046, 784));
    assert_eq!(inst.equiv.mode(), CovMode::MonteCarlo);
    let plan = TrialPlan { master_seed: 9, trials: 20, n_test: 2000, solver: SolverConfig::default() };
    let results = run_trials(&instances, &plan).unwrap();
    let report = build_report(&results, &ReportConfig { seed: 9, ..ReportConfig::default() }).unwrap();
    let ci = &report.families[0].sizes[0].train_gap;
    let miss = if ci.covers(0.0) { 0.0 } else { ci.lower.max(-ci.upper) / ci.se };
    let status = if miss == 0.0 {
        "covers 0"
    } else if miss <= 1.0 {
        "misses by <= 1 SE"
    } else if miss <= 3.0 {
        "misses by 1-3 SE (reported)"
    } else {
        "misses by > 3 SE"
    };
    outcome(
        miss <= 3.0,
        format!("gap {:.2e} CI [{:.2e}, {:.2e}] se {:.2e}: {status}", ci.estimate, ci.lower, ci.upper, ci.se),
    )
}

fn c10_determinism(first: &[TrialResult]) -> Outcome {
    let a = trial_csv_bytes(first).unwrap();
    let b = trial_csv_bytes(&universality_campaign()).unwrap();
    outcome(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn report(id: usize, budget_secs: f64, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let secs = start.elapsed().as_secs_f64();
    let passed = out.passed && secs < budget_secs;
    let status = if passed { "PASS" } else { "FAIL" };
    println!("criterion {id:>2}: {status}  {} [{secs:.1}s, budget {budget_secs:.0}s]", out.detail);
    passed
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report(1, 1.0, c1_moments);
    all &= report(2, 30.0, c2_covariance_triangle);
    all &= report(3, 10.0, c3_ridge);
    all &= report(4, 20.0, c4_free_energy);
    all &= report(5, 600.0, c5_null_calibration);
    let mut campaign = Vec::new();
    all &= report(6, 1800.0, || {
        campaign = universality_campaign();
        c6_universality(&campaign)
    });
    all &= report(7, 1800.0, || c7_test_gap(&campaign));
    all &= report(8, 300.0, c8_convex_sandwich);
    all &= report(9, 1200.0, c9_neural_tangent);
    all &= report(10, 1800.0, || c10_determinism(&campaign));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
