//! Feature families: random features, neural tangent features, and linear
//! maps of vectors with independent entries.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{hermite_coefficients, hermite_series, GaussHermite};
use crate::rng::rng_from_seed;

/// exp(-1/2), the value of `E[cos G]`.
pub const EXP_NEG_HALF: f64 = 0.606_530_659_712_633_4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    /// `tanh`; odd, so `E[σ(G)] = 0`.
    TanhRf,
    /// `sin(t) - e^{-1/2} t`, whose derivative `cos(t) - e^{-1/2}` has
    /// `E[σ'(G)] = E[G σ'(G)] = 0`.
    ShiftedSineNt,
    /// Finite series in the orthonormal Hermite basis, index = degree.
    CustomHermite { hermite_coeffs: Vec<f64> },
}

impl Activation {
    pub fn hermite(coeffs: Vec<f64>) -> Self {
        Activation::CustomHermite {
            hermite_coeffs: coeffs,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::TanhRf => "tanh-rf",
            Activation::ShiftedSineNt => "shifted-sine-nt",
            Activation::CustomHermite { .. } => "custom-hermite",
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Activation::TanhRf => t.tanh(),
            Activation::ShiftedSineNt => t.sin() - EXP_NEG_HALF * t,
            Activation::CustomHermite { hermite_coeffs } => hermite_series(hermite_coeffs, t).0,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Activation::TanhRf => {
                let th = t.tanh();
                1.0 - th * th
            }
            Activation::ShiftedSineNt => t.cos() - EXP_NEG_HALF,
            Activation::CustomHermite { hermite_coeffs } => hermite_series(hermite_coeffs, t).1,
        }
    }

    /// Hermite coefficients up to `degree`. Exact for custom-hermite
    /// activations (zero padded or truncated); by `rule` otherwise.
    pub fn hermite_coefficients(&self, degree: usize, rule: &GaussHermite) -> Vec<f64> {
        match self {
            Activation::CustomHermite { hermite_coeffs } => {
                let mut c = hermite_coeffs.clone();
                c.resize(degree + 1, 0.0);
                c
            }
            _ => hermite_coefficients(rule, degree, |t| self.value(t)),
        }
    }

    /// `E[σ(G)^2]` by quadrature (exact for custom-hermite).
    pub fn second_moment(&self, rule: &GaussHermite) -> f64 {
        match self {
            Activation::CustomHermite { hermite_coeffs } => {
                hermite_coeffs.iter().map(|c| c * c).sum()
            }
            _ => rule.expect(|t| self.value(t).powi(2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    RandomFeatures,
    NeuralTangent,
    LinearIndependent,
}

impl Family {
    pub fn id(self) -> &'static str {
        match self {
            Family::RandomFeatures => "random-features",
            Family::NeuralTangent => "neural-tangent",
            Family::LinearIndependent => "linear-independent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryLaw {
    Rademacher,
    Uniform,
    Laplace,
    Gaussian,
}

impl std::str::FromStr for EntryLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rademacher" => Ok(EntryLaw::Rademacher),
            "uniform" => Ok(EntryLaw::Uniform),
            "laplace" => Ok(EntryLaw::Laplace),
            "gaussian" => Ok(EntryLaw::Gaussian),
            other => Err(invalid(format!("unknown entry law `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Covariate dimension (RF/NT); equals `p` for the linear family.
    pub d: usize,
    /// Feature dimension.
    pub p: usize,
    /// Hidden width for NT (`p = m d`); zero otherwise.
    pub m: usize,
}

/// Frozen featurization map. Immutable once built.
#[derive(Debug, Clone)]
pub struct FeatureModel {
    family: Family,
    weights: DMatrix<f64>,
    sigma_half: Option<DMatrix<f64>>,
    activation: Activation,
    dims: Dims,
    nu: f64,
    entry_law: EntryLaw,
}

impl FeatureModel {
    /// `x = σ(Wᵀz)` with `W` (d×p) drawn uniformly on the sphere.
    pub fn random_features(d: usize, p: usize, activation: Activation, seed: u64) -> Result<Self> {
        let weights = sample_sphere_weights(d, p, seed)?;
        Self::random_features_with_weights(weights, activation)
    }

    pub fn random_features_with_weights(weights: DMatrix<f64>, activation: Activation) -> Result<Self> {
        let (d, p) = weights.shape();
        if d == 0 || p == 0 {
            return Err(invalid("random-features weights must be non-empty"));
        }
        Ok(Self {
            family: Family::RandomFeatures,
            weights,
            sigma_half: None,
            activation,
            dims: Dims { d, p, m: 0 },
            nu: 1.0,
            entry_law: EntryLaw::Gaussian,
        })
    }

    /// `x = (z σ'(w_1ᵀz), …, z σ'(w_mᵀz))` with `W` (d×m) on the sphere.
    pub fn neural_tangent(d: usize, m: usize, activation: Activation, seed: u64) -> Result<Self> {
        let weights = sample_sphere_weights(d, m, seed)?;
        Self::neural_tangent_with_weights(weights, activation)
    }

    pub fn neural_tangent_with_weights(weights: DMatrix<f64>, activation: Activation) -> Result<Self> {
        let (d, m) = weights.shape();
        if d == 0 || m == 0 {
            return Err(invalid("neural-tangent weights must be non-empty"));
        }
        Ok(Self {
            family: Family::NeuralTangent,
            weights,
            sigma_half: None,
            activation,
            dims: Dims { d, p: m * d, m },
            nu: 1.0,
            entry_law: EntryLaw::Gaussian,
        })
    }

    /// `x = Σ^{1/2} x̄` with i.i.d. entries of `x̄` drawn from `entry_law`
    /// scaled to variance `nu`. `op_norm_bound` caps `‖Σ^{1/2}‖_op`.
    pub fn linear(
        sigma_half: DMatrix<f64>,
        entry_law: EntryLaw,
        nu: f64,
        op_norm_bound: f64,
    ) -> Result<Self> {
        let (r, c) = sigma_half.shape();
        if r != c || r == 0 {
            return Err(invalid(format!("sigma_half must be square and non-empty, got {r}x{c}")));
        }
        if !(nu > 0.0) {
            return Err(invalid("entry variance nu must be positive"));
        }
        let op = crate::erm::operator_norm(&sigma_half);
        if op > op_norm_bound * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "‖Σ^1/2‖_op = {op} exceeds configured bound {op_norm_bound}"
            )));
        }
        Ok(Self {
            family: Family::LinearIndependent,
            weights: DMatrix::zeros(0, 0),
            sigma_half: Some(sigma_half),
            activation: Activation::hermite(vec![0.0, 1.0]),
            dims: Dims { d: r, p: r, m: 0 },
            nu,
            entry_law,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn sigma_half(&self) -> Option<&DMatrix<f64>> {
        self.sigma_half.as_ref()
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn entry_law(&self) -> EntryLaw {
        self.entry_law
    }

    /// Number of columns expected in the covariate matrix passed to
    /// [`featurize`].
    pub fn input_dim(&self) -> usize {
        self.dims.d
    }

    /// Draw the raw covariates for `n` samples: Gaussian `z` for RF/NT, or
    /// `x̄` with the configured entry law (variance `nu`) for the linear family.
    pub fn sample_covariates(&self, n: usize, seed: u64) -> Result<CovariateBatch> {
        let z = match self.family {
            Family::LinearIndependent => {
                let mut xbar = sample_linear_covariates(self.dims.p, n, self.entry_law, seed)?;
                if self.nu != 1.0 {
                    xbar *= self.nu.sqrt();
                }
                xbar
            }
            _ => standard_normal_matrix(n, self.dims.d, seed),
        };
        Ok(CovariateBatch { z, seed })
    }
}

/// `n × d` covariates with the seed that produced them.
#[derive(Debug, Clone)]
pub struct CovariateBatch {
    pub z: DMatrix<f64>,
    pub seed: u64,
}

impl CovariateBatch {
    pub fn standard_normal(n: usize, d: usize, seed: u64) -> Self {
        Self {
            z: standard_normal_matrix(n, d, seed),
            seed,
        }
    }
}

/// `rows × cols` i.i.d. N(0, 1) matrix, filled in row-major draw order.
pub fn standard_normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

/// `count` columns drawn uniformly from the unit sphere in `R^d`.
pub fn sample_sphere_weights(d: usize, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    if d == 0 || count == 0 {
        return Err(invalid(format!("sphere weights need d ≥ 1 and count ≥ 1, got d={d}, count={count}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut w = DMatrix::zeros(d, count);
    for j in 0..count {
        let mut col = w.column_mut(j);
        loop {
            for v in col.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = col.norm();
            if norm > 1e-300 {
                col /= norm;
                break;
            }
        }
    }
    Ok(w)
}

/// `n × p` matrix of i.i.d. zero-mean unit-variance entries.
pub fn sample_linear_covariates(p: usize, n: usize, law: EntryLaw, seed: u64) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(invalid("linear covariates need p ≥ 1"));
    }
    let mut rng = rng_from_seed(seed);
    let a = 3f64.sqrt();
    let b = std::f64::consts::FRAC_1_SQRT_2;
    let values: Vec<f64> = (0..n * p)
        .map(|_| match law {
            EntryLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryLaw::Uniform => rng.random_range(-a..a),
            EntryLaw::Laplace => {
                // inverse CDF on u ∈ (-1/2, 1/2)
                let u: f64 = rng.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            EntryLaw::Gaussian => StandardNormal.sample(&mut rng),
        })
        .collect();
    Ok(DMatrix::from_row_slice(n, p, &values))
}

/// Apply the feature map to every row of `z`.
pub fn featurize(model: &FeatureModel, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dims = model.dims;
    if z.ncols() != dims.d {
        return Err(Error::DimensionMismatch {
            context: "featurize covariate columns",
            expected: dims.d,
            got: z.ncols(),
        });
    }
    let n = z.nrows();
    match model.family {
        Family::RandomFeatures => {
            let mut pre = z * &model.weights;
            pre.apply(|v| *v = model.activation.value(*v));
            Ok(pre)
        }
        Family::NeuralTangent => {
            let pre = z * &model.weights;
            let (d, m) = (dims.d, dims.m);
            let mut out = DMatrix::zeros(n, m * d);
            for j in 0..m {
                for i in 0..n {
                    let s = model.activation.derivative(pre[(i, j)]);
                    for a in 0..d {
                        out[(i, j * d + a)] = z[(i, a)] * s;
                    }
                }
            }
            Ok(out)
        }
        Family::LinearIndependent => {
            let sh = model.sigma_half.as_ref().expect("linear model carries sigma_half");
            Ok(z * sh.transpose())
        }
    }
}

/// Reshape an NT parameter vector (length `m d`) into `T_θ` (d×m); block `j`
/// becomes column `j`.
pub fn nt_block_matrix(theta: &[f64], d: usize, m: usize) -> Result<DMatrix<f64>> {
    if theta.len() != d * m {
        return Err(Error::DimensionMismatch {
            context: "neural-tangent block reshape",
            expected: d * m,
            got: theta.len(),
        });
    }
    Ok(DMatrix::from_column_slice(d, m, theta))
}

/// Empirical `E[(θᵀx)^4] / E[(θᵀx)^2]^2` over `n` fresh samples; the
/// subgaussian sanity proxy for scalar projections.
pub fn projection_kurtosis_ratio(model: &FeatureModel, theta: &[f64], n: usize, seed: u64) -> Result<f64> {
    let batch = model.sample_covariates(n, seed)?;
    let x = featurize(model, &batch.z)?;
    if theta.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "projection direction",
            expected: x.ncols(),
            got: theta.len(),
        });
    }
    let th = nalgebra::DVector::from_column_slice(theta);
    let proj = x * th;
    let m2 = proj.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let m4 = proj.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
    Ok(m4 / (m2 * m2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_in_one_dimension_is_plus_minus_one() {
        let w = sample_sphere_weights(1, 3, 99).unwrap();
        for v in w.iter() {
            assert!(*v == 1.0 || *v == -1.0);
        }
    }

    #[test]
    fn sphere_columns_unit_norm_and_nearly_orthogonal() {
        let w = sample_sphere_weights(50, 50, 7).unwrap();
        for j in 0..50 {
            assert!((w.column(j).norm() - 1.0).abs() < 1e-12);
        }
        let gram = w.transpose() * &w;
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..50 {
            for j in 0..50 {
                if i != j {
                    total += gram[(i, j)].abs();
                    count += 1;
                }
            }
        }
        assert!(total / count as f64 <= 0.2);
    }

    #[test]
    fn sphere_rejects_zero_dims_and_is_reproducible() {
        assert!(sample_sphere_weights(0, 3, 1).is_err());
        assert!(sample_sphere_weights(3, 0, 1).is_err());
        assert_eq!(sample_sphere_weights(4, 5, 11).unwrap(), sample_sphere_weights(4, 5, 11).unwrap());
    }

    #[test]
    fn rf_with_orthonormal_weights_decouples() {
        let model = FeatureModel::random_features_with_weights(DMatrix::identity(2, 2), Activation::TanhRf).unwrap();
        let z = DMatrix::from_row_slice(1, 2, &[0.3, -1.2]);
        let x = featurize(&model, &z).unwrap();
        assert_eq!(x[(0, 0)], 0.3f64.tanh());
        assert_eq!(x[(0, 1)], (-1.2f64).tanh());
    }

    #[test]
    fn nt_single_neuron_substitution() {
        let w = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let act = Activation::ShiftedSineNt;
        let model = FeatureModel::neural_tangent_with_weights(w, act.clone()).unwrap();
        let (a, b) = (0.7, -2.0);
        let x = featurize(&model, &DMatrix::from_row_slice(1, 2, &[a, b])).unwrap();
        assert_eq!(x.shape(), (1, 2));
        assert_eq!(x[(0, 0)], a * act.derivative(a));
        assert_eq!(x[(0, 1)], b * act.derivative(a));
    }

    #[test]
    fn nt_block_ordering_matches_t_matrix() {
        let (d, m) = (3, 4);
        let model = FeatureModel::neural_tangent(d, m, Activation::ShiftedSineNt, 5).unwrap();
        assert_eq!(model.dims().p, m * d);
        let z = standard_normal_matrix(2, d, 8);
        let x = featurize(&model, &z).unwrap();
        let theta: Vec<f64> = (0..m * d).map(|k| (k as f64 * 0.37).sin()).collect();
        let t = nt_block_matrix(&theta, d, m).unwrap();
        for i in 0..2 {
            // θᵀx = zᵀ T σ'(Wᵀz)
            let zi = z.row(i).transpose();
            let s = (model.weights().transpose() * &zi).map(|v| model.activation().derivative(v));
            let via_t = (zi.transpose() * &t * s)[(0, 0)];
            let direct: f64 = (0..m * d).map(|k| x[(i, k)] * theta[k]).sum();
            assert!((via_t - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_identity_map() {
        let model = FeatureModel::linear(DMatrix::identity(2, 2), EntryLaw::Rademacher, 1.0, 1.0).unwrap();
        let x = featurize(&model, &DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn linear_rejects_excess_operator_norm() {
        let sh = DMatrix::from_diagonal_element(3, 3, 2.0);
        assert!(FeatureModel::linear(sh, EntryLaw::Gaussian, 1.0, 1.5).is_err());
    }

    #[test]
    fn featurize_rejects_wrong_width() {
        let model = FeatureModel::random_features(3, 4, Activation::TanhRf, 1).unwrap();
        assert!(featurize(&model, &DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn featurize_is_deterministic() {
        let model = FeatureModel::neural_tangent(4, 3, Activation::ShiftedSineNt, 2).unwrap();
        let b = model.sample_covariates(10, 3).unwrap();
        assert_eq!(featurize(&model, &b.z).unwrap(), featurize(&model, &b.z).unwrap());
        assert_eq!(b.z, model.sample_covariates(10, 3).unwrap().z);
    }

    #[test]
    fn entry_laws_have_unit_variance() {
        for law in [EntryLaw::Rademacher, EntryLaw::Uniform, EntryLaw::Laplace, EntryLaw::Gaussian] {
            let x = sample_linear_covariates(100, 2000, law, 17).unwrap();
            let n = x.len() as f64;
            let mean = x.sum() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((var - 1.0).abs() < 0.02, "{law:?}: {var}");
            assert!(mean.abs() < 0.01);
        }
        let r = sample_linear_covariates(10, 10, EntryLaw::Rademacher, 1).unwrap();
        assert!(r.iter().all(|v| *v == 1.0 || *v == -1.0));
        let u = sample_linear_covariates(10, 100, EntryLaw::Uniform, 1).unwrap();
        assert!(u.iter().all(|v| v.abs() <= 3f64.sqrt()));
        assert!("cauchy".parse::<EntryLaw>().is_err());
    }

    #[test]
    fn activation_moment_conditions() {
        let gh = GaussHermite::new(100).unwrap();
        assert!(gh.expect(|t| Activation::TanhRf.value(t)).abs() <= 1e-10);
        let nt = Activation::ShiftedSineNt;
        assert!(gh.expect(|t| nt.derivative(t)).abs() <= 1e-10);
        assert!(gh.expect(|t| t * nt.derivative(t)).abs() <= 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let acts = [
            Activation::TanhRf,
            Activation::ShiftedSineNt,
            Activation::hermite(vec![0.0, 0.8, 0.3, 0.2]),
        ];
        for act in acts {
            for t in [-2.5, -0.3, 0.0, 1.1, 3.0] {
                let h = 1e-6;
                let fd = (act.value(t + h) - act.value(t - h)) / (2.0 * h);
                assert!((fd - act.derivative(t)).abs() < 1e-7, "{} at {t}", act.name());
            }
        }
    }

    #[test]
    fn projections_have_light_tails() {
        let models = [
            FeatureModel::random_features(20, 30, Activation::TanhRf, 1).unwrap(),
            FeatureModel::neural_tangent(6, 5, Activation::ShiftedSineNt, 2).unwrap(),
            FeatureModel::linear(DMatrix::identity(30, 30), EntryLaw::Laplace, 1.0, 1.0).unwrap(),
        ];
        for model in &models {
            let p = model.dims().p;
            let theta: Vec<f64> = (0..p).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / (p as f64).sqrt()).collect();
            let ratio = projection_kurtosis_ratio(model, &theta, 10_000, 3).unwrap();
            assert!(ratio <= 30.0, "{:?}: {ratio}", model.family());
        }
    }
}
