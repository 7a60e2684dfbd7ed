//! Gaussian-equivalent features: the covariance `Σ_W = E[x xᵀ | W]`, a PSD
//! factor `L` with `L Lᵀ ≈ Σ_W`, and sampling of `g = L ξ`.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::{featurize, Family, FeatureModel};
use crate::quadrature::GaussHermite;
use crate::rng::derive_seed;

pub const DEFAULT_JITTER_REL: f64 = 1e-10;
pub const DEFAULT_HERMITE_TERMS: usize = 40;
pub const DEFAULT_QUADRATURE_ORDER: usize = 200;
const MC_CHUNK_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovMode {
    HermiteExact,
    MonteCarlo,
    Empirical,
    LinearExact,
}

impl CovMode {
    /// Linear-exact for the linear family, hermite-exact for random
    /// features, Monte Carlo otherwise.
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::LinearIndependent => CovMode::LinearExact,
            Family::RandomFeatures => CovMode::HermiteExact,
            Family::NeuralTangent => CovMode::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub samples: Option<usize>,
    pub quadrature_order: Option<usize>,
    pub hermite_terms: Option<usize>,
    /// Absolute value added to the diagonal before factorization.
    pub jitter: f64,
    /// Sum of the magnitudes of clipped negative eigenvalues.
    pub clipped_mass: f64,
}

#[derive(Debug, Clone)]
pub struct GaussianEquivalent {
    mode: CovMode,
    factor: DMatrix<f64>,
    provenance: Provenance,
}

impl GaussianEquivalent {
    pub fn from_factor(mode: CovMode, factor: DMatrix<f64>, provenance: Provenance) -> Self {
        Self {
            mode,
            factor,
            provenance,
        }
    }

    /// Factor a covariance estimate and wrap it.
    pub fn from_covariance(
        mode: CovMode,
        cov: &DMatrix<f64>,
        jitter_rel: f64,
        mut provenance: Provenance,
    ) -> Result<Self> {
        let fac = factor_covariance(cov, jitter_rel)?;
        provenance.jitter = fac.jitter;
        provenance.clipped_mass = fac.clipped_mass;
        Ok(Self::from_factor(mode, fac.factor, provenance))
    }

    /// Exact equivalent of the linear family: factor `√ν Σ^{1/2}`.
    pub fn linear_exact(model: &FeatureModel) -> Result<Self> {
        let sh = model
            .sigma_half()
            .ok_or_else(|| invalid("linear-exact mode requires the linear family"))?;
        Ok(Self::from_factor(
            CovMode::LinearExact,
            sh * model.nu().sqrt(),
            Provenance {
                samples: None,
                quadrature_order: None,
                hermite_terms: None,
                jitter: 0.0,
                clipped_mass: 0.0,
            },
        ))
    }

    /// Build the equivalent for `model` with the requested covariance mode.
    /// `n_cov` is the sample count for Monte Carlo and empirical modes.
    pub fn for_model(model: &FeatureModel, mode: CovMode, n_cov: usize, seed: u64) -> Result<Self> {
        let base = Provenance {
            samples: None,
            quadrature_order: None,
            hermite_terms: None,
            jitter: 0.0,
            clipped_mass: 0.0,
        };
        match mode {
            CovMode::LinearExact => Self::linear_exact(model),
            CovMode::HermiteExact => {
                if model.family() != Family::RandomFeatures {
                    return Err(invalid("hermite-exact covariance is only defined for random features"));
                }
                let rule = GaussHermite::new(DEFAULT_QUADRATURE_ORDER)?;
                let cov = rf_covariance_exact_diagonal(model, DEFAULT_HERMITE_TERMS, &rule)?;
                Self::from_covariance(
                    mode,
                    &cov,
                    DEFAULT_JITTER_REL,
                    Provenance {
                        quadrature_order: Some(DEFAULT_QUADRATURE_ORDER),
                        hermite_terms: Some(DEFAULT_HERMITE_TERMS),
                        ..base
                    },
                )
            }
            CovMode::MonteCarlo | CovMode::Empirical => {
                let cov = mc_covariance(model, n_cov, seed)?;
                Self::from_covariance(
                    mode,
                    &cov,
                    DEFAULT_JITTER_REL,
                    Provenance {
                        samples: Some(n_cov),
                        ..base
                    },
                )
            }
        }
    }

    pub fn mode(&self) -> CovMode {
        self.mode
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

fn check_unit_columns(w: &DMatrix<f64>) -> Result<()> {
    for (j, col) in w.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(invalid(format!("weight column {j} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

/// `Σ[i,j] = sum_{k=0..=order} c_k^2 ρ_ij^k` with `ρ_ij = w_iᵀ w_j`, where
/// `coeffs[k]` is the coefficient of the orthonormal Hermite polynomial of
/// degree `k` (zero for mean-zero activations at `k = 0`).
pub fn rf_covariance_hermite(w: &DMatrix<f64>, coeffs: &[f64], order: usize) -> Result<DMatrix<f64>> {
    if order == 0 {
        return Err(invalid("hermite order must be at least 1"));
    }
    check_unit_columns(w)?;
    let sq: Vec<f64> = (0..=order)
        .map(|k| coeffs.get(k).copied().unwrap_or(0.0).powi(2))
        .collect();
    let gram = w.transpose() * w;
    let p = w.ncols();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let rho = if i == j { 1.0 } else { gram[(i, j)] };
            // Horner in ρ
            let v = sq.iter().rev().fold(0.0, |acc, c| acc * rho + c);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Random-features covariance from a truncated Hermite expansion of the
/// model's activation, with the diagonal set to the exact `E[σ(G)^2]`.
pub fn rf_covariance_exact_diagonal(model: &FeatureModel, terms: usize, rule: &GaussHermite) -> Result<DMatrix<f64>> {
    let coeffs = model.activation().hermite_coefficients(terms, rule);
    let mut cov = rf_covariance_hermite(model.weights(), &coeffs, terms)?;
    let diag = model.activation().second_moment(rule);
    cov.fill_diagonal(diag);
    Ok(cov)
}

/// Second-moment matrix `(1/n) Φᵀ Φ` of a feature matrix.
pub fn empirical_covariance(features: &DMatrix<f64>) -> DMatrix<f64> {
    let n = features.nrows().max(1) as f64;
    let mut cov = features.transpose() * features;
    cov /= n;
    symmetrize(&mut cov);
    cov
}

/// Monte Carlo estimate `(1/n_cov) Φᵀ Φ` over a fresh featurized batch.
/// Chunks are generated in parallel with per-chunk seeds and reduced in
/// chunk order, so the result is bit-stable across thread counts.
pub fn mc_covariance(model: &FeatureModel, n_cov: usize, seed: u64) -> Result<DMatrix<f64>> {
    let p = model.dims().p;
    if n_cov == 0 {
        return Err(invalid("n_cov must be positive"));
    }
    if n_cov < p {
        warn!("mc_covariance: n_cov = {n_cov} < p = {p}; estimate is rank deficient");
    }
    let chunks = n_cov.div_ceil(MC_CHUNK_ROWS);
    let partials: Vec<Result<DMatrix<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let rows = MC_CHUNK_ROWS.min(n_cov - c * MC_CHUNK_ROWS);
            let batch = model.sample_covariates(rows, derive_seed(seed, &[c as u64]))?;
            let phi = featurize(model, &batch.z)?;
            Ok(phi.transpose() * phi)
        })
        .collect();
    let mut acc = DMatrix::zeros(p, p);
    for part in partials {
        acc += part?;
    }
    acc /= n_cov as f64;
    symmetrize(&mut acc);
    Ok(acc)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub factor: DMatrix<f64>,
    pub jitter: f64,
    pub clipped_mass: f64,
}

/// PSD factor `L = U diag(√λ⁺)` of `cov + jitter I`, where
/// `jitter = jitter_rel · trace(cov) / p` and negative eigenvalues are
/// clipped at zero.
pub fn factor_covariance(cov: &DMatrix<f64>, jitter_rel: f64) -> Result<CovarianceFactor> {
    let (p, c) = cov.shape();
    if p != c {
        return Err(invalid(format!("covariance must be square, got {p}x{c}")));
    }
    if jitter_rel < 0.0 {
        return Err(invalid("jitter_rel must be nonnegative"));
    }
    if p == 0 {
        return Ok(CovarianceFactor {
            factor: DMatrix::zeros(0, 0),
            jitter: 0.0,
            clipped_mass: 0.0,
        });
    }
    let scale = cov.amax();
    let asym = (0..p)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (cov[(i, j)] - cov[(j, i)]).abs())
        .fold(0.0, f64::max);
    if asym > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let mut work = cov.clone();
    symmetrize(&mut work);
    let jitter = if jitter_rel > 0.0 {
        jitter_rel * cov.trace() / p as f64
    } else {
        0.0
    };
    if jitter > 0.0 {
        for i in 0..p {
            work[(i, i)] += jitter;
        }
    }
    let eig = SymmetricEigen::new(work);
    let mut clipped_mass = 0.0;
    let mut factor = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let lam = if lambda < 0.0 {
            clipped_mass += -lambda;
            0.0
        } else {
            lambda
        };
        factor.column_mut(j).scale_mut(lam.sqrt());
    }
    Ok(CovarianceFactor {
        factor,
        jitter,
        clipped_mass,
    })
}

/// `n × p` rows `g_i = L ξ_i` with `ξ_i ~ N(0, I)`, i.e. `Ξ Lᵀ`.
pub fn sample_gaussian(equiv: &GaussianEquivalent, n: usize, seed: u64) -> DMatrix<f64> {
    let xi = crate::features::standard_normal_matrix(n, equiv.factor.ncols(), seed);
    xi * equiv.factor.transpose()
}
