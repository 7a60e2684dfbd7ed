//! Family instances and the matched X/G trial loop.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equiv::{CovMode, GaussianEquivalent};
use crate::erm::{
    solve_erm, test_risks, ConstraintSet, ErmProblem, Head, Labeler, Loss, Regularizer, RiskEstimate, SolverConfig,
};
use crate::error::{invalid, Error, Result};
use crate::features::{standard_normal_matrix, Activation, EntryLaw, FeatureModel};
use crate::harness::io::fmt_f64;
use crate::rng::{derive_seed, tag, Stream};
use crate::source::FeatureSource;

pub const TRIAL_CSV_HEADER: [&str; 12] = [
    "family", "n", "p", "trial", "seed", "train_opt", "test_x", "test_x_se", "test_g", "test_g_se", "iters", "flags",
];

pub const CONTROL_ID: &str = "gaussian-control";

fn default_gamma_p() -> f64 {
    0.75
}
fn default_one() -> f64 {
    1.0
}
fn default_radius() -> f64 {
    3.0
}
fn default_tanh() -> Activation {
    Activation::TanhRf
}
fn default_shifted_sine() -> Activation {
    Activation::ShiftedSineNt
}
fn default_rademacher() -> EntryLaw {
    EntryLaw::Rademacher
}
fn default_n_cov() -> usize {
    20_000
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SigmaSpec {
    #[default]
    Identity,
    /// `Σ_ij = rho^|i-j|`
    Ar1 { rho: f64 },
}

impl SigmaSpec {
    /// Symmetric square root of `Σ` and a bound on its operator norm.
    pub fn sqrt(&self, p: usize) -> Result<(DMatrix<f64>, f64)> {
        match *self {
            SigmaSpec::Identity => Ok((DMatrix::identity(p, p), 1.0)),
            SigmaSpec::Ar1 { rho } => {
                if !(rho.abs() < 1.0) {
                    return Err(invalid("ar1 rho must lie in (-1, 1)"));
                }
                let cov = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
                let eig = cov.symmetric_eigen();
                let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                let half = &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
                Ok((half, ((1.0 + rho.abs()) / (1.0 - rho.abs())).sqrt()))
            }
        }
    }
}

/// One feature family with its size rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    /// `n` = base size, `p = round(γ_p n)`, `d = round(γ_d p)`.
    RandomFeatures {
        #[serde(default = "default_tanh")]
        activation: Activation,
        #[serde(default = "default_gamma_p")]
        gamma_p: f64,
        #[serde(default = "default_one")]
        gamma_d: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        cov_mode: Option<CovMode>,
        #[serde(default = "default_n_cov")]
        n_cov: usize,
        #[serde(default)]
        ladder: Option<Vec<usize>>,
    },
    /// `d` = base size, `m = round(γ̃ d)`, `p = m d`, `n = ceil(p / γ)`.
    NeuralTangent {
        #[serde(default = "default_shifted_sine")]
        activation: Activation,
        #[serde(default = "default_one")]
        gamma_tilde: f64,
        #[serde(default = "default_gamma_p")]
        gamma: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        cov_mode: Option<CovMode>,
        #[serde(default = "default_n_cov")]
        n_cov: usize,
        #[serde(default)]
        ladder: Option<Vec<usize>>,
    },
    /// `n` = base size, `p = round(γ_p n)`.
    LinearIndependent {
        #[serde(default = "default_rademacher")]
        entry_law: EntryLaw,
        #[serde(default = "default_one")]
        nu: f64,
        #[serde(default = "default_gamma_p")]
        gamma_p: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        sigma: SigmaSpec,
        #[serde(default)]
        ladder: Option<Vec<usize>>,
    },
    /// Both arms are independent `N(0, I_p)` draws.
    GaussianControl {
        #[serde(default = "default_gamma_p")]
        gamma_p: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        ladder: Option<Vec<usize>>,
    },
}

impl FamilySpec {
    pub fn random_features() -> Self {
        FamilySpec::RandomFeatures {
            activation: default_tanh(),
            gamma_p: default_gamma_p(),
            gamma_d: 1.0,
            radius: default_radius(),
            cov_mode: None,
            n_cov: default_n_cov(),
            ladder: None,
        }
    }

    pub fn neural_tangent() -> Self {
        FamilySpec::NeuralTangent {
            activation: default_shifted_sine(),
            gamma_tilde: 1.0,
            gamma: default_gamma_p(),
            radius: default_radius(),
            cov_mode: None,
            n_cov: default_n_cov(),
            ladder: None,
        }
    }

    pub fn linear(entry_law: EntryLaw) -> Self {
        FamilySpec::LinearIndependent {
            entry_law,
            nu: 1.0,
            gamma_p: default_gamma_p(),
            radius: default_radius(),
            sigma: SigmaSpec::Identity,
            ladder: None,
        }
    }

    pub fn control() -> Self {
        FamilySpec::GaussianControl {
            gamma_p: default_gamma_p(),
            radius: default_radius(),
            ladder: None,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            FamilySpec::RandomFeatures { .. } => "random-features",
            FamilySpec::NeuralTangent { .. } => "neural-tangent",
            FamilySpec::LinearIndependent { .. } => "linear-independent",
            FamilySpec::GaussianControl { .. } => CONTROL_ID,
        }
    }

    pub fn ladder_override(&self) -> Option<&[usize]> {
        match self {
            FamilySpec::RandomFeatures { ladder, .. }
            | FamilySpec::NeuralTangent { ladder, .. }
            | FamilySpec::LinearIndependent { ladder, .. }
            | FamilySpec::GaussianControl { ladder, .. } => ladder.as_deref(),
        }
    }

    pub fn with_ladder(mut self, sizes: Vec<usize>) -> Self {
        match &mut self {
            FamilySpec::RandomFeatures { ladder, .. }
            | FamilySpec::NeuralTangent { ladder, .. }
            | FamilySpec::LinearIndependent { ladder, .. }
            | FamilySpec::GaussianControl { ladder, .. } => *ladder = Some(sizes),
        }
        self
    }

    /// `(n, p)` for a base size.
    pub fn dims_for(&self, base: usize) -> Result<(usize, usize)> {
        let rounded = |v: f64| v.round().max(1.0) as usize;
        match *self {
            FamilySpec::RandomFeatures { gamma_p, .. }
            | FamilySpec::LinearIndependent { gamma_p, .. }
            | FamilySpec::GaussianControl { gamma_p, .. } => Ok((base, rounded(gamma_p * base as f64))),
            FamilySpec::NeuralTangent { gamma_tilde, gamma, .. } => {
                let m = rounded(gamma_tilde * base as f64);
                let p = m * base;
                Ok(((p as f64 / gamma).ceil() as usize, p))
            }
        }
    }

    /// Field-level validation; `at` prefixes the reported field path.
    pub fn validate(&self, at: &str) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config {
                    field: format!("{at}.{name}"),
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        match self {
            FamilySpec::RandomFeatures { gamma_p, gamma_d, radius, .. } => {
                positive("gamma_p", *gamma_p)?;
                positive("gamma_d", *gamma_d)?;
                positive("radius", *radius)?;
            }
            FamilySpec::NeuralTangent { gamma_tilde, gamma, radius, .. } => {
                positive("gamma_tilde", *gamma_tilde)?;
                positive("gamma", *gamma)?;
                positive("radius", *radius)?;
            }
            FamilySpec::LinearIndependent { nu, gamma_p, radius, .. } => {
                positive("nu", *nu)?;
                positive("gamma_p", *gamma_p)?;
                positive("radius", *radius)?;
            }
            FamilySpec::GaussianControl { gamma_p, radius, .. } => {
                positive("gamma_p", *gamma_p)?;
                positive("radius", *radius)?;
            }
        }
        if let Some(l) = self.ladder_override() {
            check_ladder(&format!("{at}.ladder"), l)?;
        }
        Ok(())
    }
}

pub fn check_ladder(field: &str, ladder: &[usize]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::Config {
            field: field.to_string(),
            reason: "ladder must contain at least one size".into(),
        });
    }
    if ladder[0] == 0 || ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config {
            field: field.to_string(),
            reason: "ladder must be positive and strictly increasing".into(),
        });
    }
    Ok(())
}

/// Loss, labels, regularizer and ground-truth scale shared by all families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub loss: Loss,
    pub labeler: Labeler,
    pub regularizer: Regularizer,
    #[serde(default = "default_one")]
    pub theta_star_norm: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            loss: Loss::Huber { delta: 1.0 },
            labeler: Labeler {
                eta: crate::erm::EtaKind::Linear,
                tau: 0.5,
                noise_law: crate::erm::NoiseLaw::Gaussian,
            },
            regularizer: Regularizer::Ridge { lambda: 0.1 },
            theta_star_norm: 1.0,
        }
    }
}

/// Feature source for the X arm.
#[derive(Debug, Clone)]
pub enum ArmSource {
    Model(FeatureModel),
    Gaussian(GaussianEquivalent),
}

impl FeatureSource for ArmSource {
    fn dim(&self) -> usize {
        match self {
            ArmSource::Model(m) => m.dim(),
            ArmSource::Gaussian(g) => g.dim(),
        }
    }

    fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        match self {
            ArmSource::Model(m) => m.sample(n, seed),
            ArmSource::Gaussian(g) => g.sample(n, seed),
        }
    }

    fn sample_projections(&self, dirs: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        match self {
            ArmSource::Model(m) => m.sample_projections(dirs, n, seed),
            ArmSource::Gaussian(g) => g.sample_projections(dirs, n, seed),
        }
    }
}

/// A family at one ladder size: frozen weights, Gaussian equivalent, and
/// the ERM problem with its ground truth.
#[derive(Debug, Clone)]
pub struct FamilyInstance {
    pub family: &'static str,
    pub base: usize,
    pub n: usize,
    pub p: usize,
    pub x_source: ArmSource,
    pub equiv: GaussianEquivalent,
    pub problem: ErmProblem,
    pub seed: u64,
}

impl FamilyInstance {
    pub fn build(spec: &FamilySpec, problem: &ProblemSpec, base: usize, master_seed: u64) -> Result<Self> {
        let seed = derive_seed(master_seed, &[tag(spec.id()), base as u64]);
        let (n, p) = spec.dims_for(base)?;
        let (x_source, equiv, constraint) = match spec {
            FamilySpec::RandomFeatures { activation, gamma_d, radius, cov_mode, n_cov, .. } => {
                let d = (gamma_d * p as f64).round().max(1.0) as usize;
                let model = FeatureModel::random_features(d, p, activation.clone(), Stream::Weights.seed(seed))?;
                let mode = cov_mode.unwrap_or(CovMode::default_for(model.family()));
                let equiv = GaussianEquivalent::for_model(&model, mode, *n_cov, Stream::Covariance.seed(seed))?;
                (ArmSource::Model(model), equiv, ConstraintSet::l2_ball(*radius))
            }
            FamilySpec::NeuralTangent { activation, radius, cov_mode, n_cov, .. } => {
                let m = p / base;
                let model = FeatureModel::neural_tangent(base, m, activation.clone(), Stream::Weights.seed(seed))?;
                let mode = cov_mode.unwrap_or(CovMode::default_for(model.family()));
                let equiv = GaussianEquivalent::for_model(&model, mode, *n_cov, Stream::Covariance.seed(seed))?;
                (ArmSource::Model(model), equiv, ConstraintSet::nt_operator_ball(*radius, base))
            }
            FamilySpec::LinearIndependent { entry_law, nu, radius, sigma, .. } => {
                let (half, bound) = sigma.sqrt(p)?;
                let model = FeatureModel::linear(half, *entry_law, *nu, bound)?;
                let equiv = GaussianEquivalent::linear_exact(&model)?;
                (ArmSource::Model(model), equiv, ConstraintSet::linf_ball(*radius))
            }
            FamilySpec::GaussianControl { radius, .. } => {
                let model = FeatureModel::linear(DMatrix::identity(p, p), EntryLaw::Gaussian, 1.0, 1.0)?;
                let equiv = GaussianEquivalent::linear_exact(&model)?;
                (ArmSource::Gaussian(equiv.clone()), equiv, ConstraintSet::l2_ball(*radius))
            }
        };
        let zeta = standard_normal_matrix(p, 1, Stream::GroundTruth.seed(seed));
        let theta_star = constraint.project(&(&zeta * (problem.theta_star_norm / zeta.norm())));
        let problem = ErmProblem::new(
            problem.loss,
            Head::Identity,
            problem.labeler,
            theta_star,
            problem.regularizer,
            constraint,
        )?;
        Ok(Self {
            family: spec.id(),
            base,
            n,
            p,
            x_source,
            equiv,
            problem,
            seed,
        })
    }

    pub fn trial_seed(&self, master_seed: u64, trial: usize) -> u64 {
        derive_seed(master_seed, &[tag(self.family), self.n as u64, trial as u64])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    X,
    G,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::X => "X",
            Arm::G => "G",
        })
    }
}

/// One arm of a trial. `test_x` and `test_g` are the risks of this arm's
/// minimizer under the feature model and under its Gaussian equivalent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub train_opt: f64,
    pub test_x: RiskEstimate,
    pub test_g: RiskEstimate,
    pub iterations: usize,
    pub flags: Vec<String>,
    #[serde(skip)]
    pub theta_hat: Option<DMatrix<f64>>,
}

impl ArmOutcome {
    fn quarantined(reason: &str) -> Self {
        let nan = RiskEstimate { mean: f64::NAN, se: f64::NAN };
        Self {
            train_opt: f64::NAN,
            test_x: nan,
            test_g: nan,
            iterations: 0,
            flags: vec!["quarantined".into(), reason.into()],
            theta_hat: None,
        }
    }

    pub fn is_quarantined(&self) -> bool {
        self.flags.iter().any(|f| f == "quarantined")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub family: String,
    pub n: usize,
    pub p: usize,
    pub trial: usize,
    pub seed: u64,
    pub x: ArmOutcome,
    pub g: ArmOutcome,
}

impl TrialResult {
    pub fn arm(&self, arm: Arm) -> &ArmOutcome {
        match arm {
            Arm::X => &self.x,
            Arm::G => &self.g,
        }
    }

    pub fn is_quarantined(&self) -> bool {
        self.x.is_quarantined() || self.g.is_quarantined()
    }

    /// Reference used to name saved minimizers.
    pub fn theta_ref(&self, arm: Arm) -> String {
        format!("{}_n{}_t{}_{}", self.family, self.n, self.trial, arm)
    }

    /// The two arms swapped, as if the Gaussian arm were the feature model.
    pub fn swapped(&self) -> Self {
        let flip = |a: &ArmOutcome| ArmOutcome {
            test_x: a.test_g,
            test_g: a.test_x,
            ..a.clone()
        };
        Self {
            x: flip(&self.g),
            g: flip(&self.x),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub master_seed: u64,
    pub trials: usize,
    pub n_test: usize,
    pub solver: SolverConfig,
}

fn solve_arm(inst: &FamilyInstance, x: &DMatrix<f64>, eps: &[f64], cfg: &SolverConfig) -> Result<(f64, DMatrix<f64>, usize, Vec<String>)> {
    let y = inst.problem.labels_from_noise(x, eps)?;
    let sol = solve_erm(&inst.problem, x, &y, cfg)?;
    if !sol.objective.is_finite() {
        return Err(Error::SolverDiverged { iteration: sol.iterations });
    }
    let mut flags: Vec<String> = sol.flags().into_iter().map(String::from).collect();
    flags.extend(inst.problem.flags().into_iter().map(String::from));
    Ok((sol.objective, sol.theta_hat, sol.iterations, flags))
}

/// Training data of one trial. Both arms use the same noise vector.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub seed: u64,
    pub eps: Vec<f64>,
    pub x: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

pub fn trial_data(inst: &FamilyInstance, plan: &TrialPlan, trial: usize) -> Result<TrialData> {
    let seed = inst.trial_seed(plan.master_seed, trial);
    Ok(TrialData {
        seed,
        eps: inst.problem.labeler.draw_noise(inst.n, Stream::Noise.seed(seed)),
        x: inst.x_source.sample(inst.n, Stream::TrainX.seed(seed))?,
        g: inst.equiv.sample(inst.n, Stream::TrainG.seed(seed))?,
    })
}

/// Run one matched trial: X and G share the label noise `ε`.
pub fn run_trial(inst: &FamilyInstance, plan: &TrialPlan, trial: usize) -> Result<TrialResult> {
    let TrialData { seed, eps, x, g } = trial_data(inst, plan, trial)?;
    let cfg = SolverConfig {
        seed: Stream::Init.seed(seed),
        ..plan.solver.clone()
    };
    let solved: Vec<Result<(f64, DMatrix<f64>, usize, Vec<String>)>> =
        [&x, &g].par_iter().map(|m| solve_arm(inst, m, &eps, &cfg)).collect();
    let mut arms = Vec::with_capacity(2);
    for s in solved {
        arms.push(match s {
            Ok(v) => Some(v),
            Err(Error::SolverDiverged { .. }) => None,
            Err(e) => return Err(e),
        });
    }
    let thetas: Vec<&DMatrix<f64>> = arms.iter().flatten().map(|a| &a.1).collect();
    let (rx, rg) = if thetas.is_empty() {
        (vec![], vec![])
    } else {
        (
            test_risks(&inst.problem, &thetas, &inst.x_source, plan.n_test, Stream::TestX.seed(seed))?,
            test_risks(&inst.problem, &thetas, &inst.equiv, plan.n_test, Stream::TestG.seed(seed))?,
        )
    };
    let mut next = 0;
    let mut outcome = |arm: Option<(f64, DMatrix<f64>, usize, Vec<String>)>| match arm {
        None => ArmOutcome::quarantined("diverged"),
        Some((train_opt, theta, iterations, flags)) => {
            let o = ArmOutcome {
                train_opt,
                test_x: rx[next],
                test_g: rg[next],
                iterations,
                flags,
                theta_hat: Some(theta),
            };
            next += 1;
            o
        }
    };
    let mut it = arms.into_iter();
    let xo = outcome(it.next().unwrap());
    let go = outcome(it.next().unwrap());
    Ok(TrialResult {
        family: inst.family.to_string(),
        n: inst.n,
        p: inst.p,
        trial,
        seed,
        x: xo,
        g: go,
    })
}

/// Run `plan.trials` matched trials for every instance. Output is sorted by
/// `(family, n, trial)` regardless of scheduling.
pub fn run_trials(instances: &[FamilyInstance], plan: &TrialPlan) -> Result<Vec<TrialResult>> {
    if plan.trials == 0 {
        return Err(invalid("trial count must be positive"));
    }
    plan.solver.validate()?;
    let units: Vec<(usize, usize)> = (0..instances.len())
        .flat_map(|i| (0..plan.trials).map(move |t| (i, t)))
        .collect();
    let mut out = units
        .par_iter()
        .map(|&(i, t)| run_trial(&instances[i], plan, t))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| (a.family.as_str(), a.n, a.trial).cmp(&(b.family.as_str(), b.n, b.trial)));
    Ok(out)
}

/// Build every `(family, size)` instance in ladder order.
pub fn build_instances(
    families: &[FamilySpec],
    problem: &ProblemSpec,
    ladder: &[usize],
    master_seed: u64,
) -> Result<Vec<FamilyInstance>> {
    let jobs: Vec<(&FamilySpec, usize)> = families
        .iter()
        .flat_map(|f| f.ladder_override().unwrap_or(ladder).iter().map(move |&b| (f, b)))
        .collect();
    jobs.par_iter()
        .map(|(f, b)| FamilyInstance::build(f, problem, *b, master_seed))
        .collect()
}

fn arm_row(r: &TrialResult, arm: Arm) -> Vec<String> {
    let a = r.arm(arm);
    vec![
        format!("{}:{}", r.family, arm),
        r.n.to_string(),
        r.p.to_string(),
        r.trial.to_string(),
        r.seed.to_string(),
        fmt_f64(a.train_opt),
        fmt_f64(a.test_x.mean),
        fmt_f64(a.test_x.se),
        fmt_f64(a.test_g.mean),
        fmt_f64(a.test_g.se),
        a.iterations.to_string(),
        a.flags.join(";"),
    ]
}

/// CSV rows, two per trial (X arm then G arm).
pub fn trial_rows(results: &[TrialResult]) -> Vec<Vec<String>> {
    results.iter().flat_map(|r| [arm_row(r, Arm::X), arm_row(r, Arm::G)]).collect()
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: usize) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("");
    raw.trim().parse().map_err(|_| Error::Config {
        field: format!("line {line}, column {}", TRIAL_CSV_HEADER[idx]),
        reason: format!("cannot parse {raw:?}"),
    })
}

/// Parse a trial CSV back into paired results.
pub fn parse_trial_csv(text: &str) -> Result<Vec<TrialResult>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != TRIAL_CSV_HEADER {
        return Err(Error::Config {
            field: "header".into(),
            reason: format!("expected {}", TRIAL_CSV_HEADER.join(",")),
        });
    }
    type Key = (String, usize, usize);
    let mut pending: std::collections::BTreeMap<Key, (Option<ArmOutcome>, Option<ArmOutcome>, usize, u64)> =
        Default::default();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let label = rec.get(0).unwrap_or("");
        let (family, arm) = label.rsplit_once(':').ok_or_else(|| Error::Config {
            field: format!("line {line}, column family"),
            reason: format!("expected <family>:<X|G>, got {label:?}"),
        })?;
        let flags: Vec<String> = rec.get(11).unwrap_or("").split(';').filter(|s| !s.is_empty()).map(String::from).collect();
        let outcome = ArmOutcome {
            train_opt: parse_field(&rec, 5, line)?,
            test_x: RiskEstimate { mean: parse_field(&rec, 6, line)?, se: parse_field(&rec, 7, line)? },
            test_g: RiskEstimate { mean: parse_field(&rec, 8, line)?, se: parse_field(&rec, 9, line)? },
            iterations: parse_field(&rec, 10, line)?,
            flags,
            theta_hat: None,
        };
        let n: usize = parse_field(&rec, 1, line)?;
        let p: usize = parse_field(&rec, 2, line)?;
        let trial: usize = parse_field(&rec, 3, line)?;
        let seed: u64 = parse_field(&rec, 4, line)?;
        let slot = pending.entry((family.to_string(), n, trial)).or_insert((None, None, p, seed));
        let target = match arm {
            "X" => &mut slot.0,
            "G" => &mut slot.1,
            other => {
                return Err(Error::Config {
                    field: format!("line {line}, column family"),
                    reason: format!("unknown arm {other:?}"),
                })
            }
        };
        if target.replace(outcome).is_some() {
            return Err(Error::Config {
                field: format!("line {line}"),
                reason: format!("duplicate row for {label} n={n} trial={trial}"),
            });
        }
    }
    pending
        .into_iter()
        .map(|((family, n, trial), (x, g, p, seed))| match (x, g) {
            (Some(x), Some(g)) => Ok(TrialResult { family, n, p, trial, seed, x, g }),
            _ => Err(Error::Config {
                field: format!("{family} n={n} trial={trial}"),
                reason: "missing X or G row".into(),
            }),
        })
        .collect()
}
