use nalgebra::DMatrix;

use crate::equiv::GaussianEquivalent;
use crate::error::Result;
use crate::features::{featurize, FeatureModel};

/// Anything that can produce i.i.d. feature rows from a seed.
pub trait FeatureSource: Sync {
    fn dim(&self) -> usize;

    /// `n × dim` matrix of fresh feature rows.
    fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>>;

    /// `sample(n, seed) * dirs`, possibly computed without materializing
    /// the feature matrix.
    fn sample_projections(&self, dirs: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        Ok(self.sample(n, seed)? * dirs)
    }
}

impl FeatureSource for FeatureModel {
    fn dim(&self) -> usize {
        self.dims().p
    }

    fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        let batch = self.sample_covariates(n, seed)?;
        featurize(self, &batch.z)
    }
}

impl FeatureSource for GaussianEquivalent {
    fn dim(&self) -> usize {
        self.factor().nrows()
    }

    fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        Ok(crate::equiv::sample_gaussian(self, n, seed))
    }

    fn sample_projections(&self, dirs: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        // Ξ Lᵀ D = Ξ (Lᵀ D): same draws as `sample`, without the n×p product.
        let xi = crate::features::standard_normal_matrix(n, self.factor().ncols(), seed);
        Ok(xi * (self.factor().transpose() * dirs))
    }
}
