//! Two-sample statistics: percentile bootstrap, Kolmogorov–Smirnov, and
//! bounded-Lipschitz gaps over a dictionary of test functions.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub const DEFAULT_RESAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Standard deviation of the bootstrap replicates.
    pub se: f64,
    pub level: f64,
    pub resamples: usize,
}

impl BootstrapCi {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }
}

/// Mean shifted by the first value, so constant data is reproduced exactly.
pub fn mean(values: &[f64]) -> f64 {
    let shift = values[0];
    shift + values.iter().map(|v| v - shift).sum::<f64>() / values.len() as f64
}

pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Linear-interpolated quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap of `stat` over index resamples of `0..n`.
///
/// The interval is widened to contain the point estimate when the
/// replicate distribution is biased away from it.
pub fn bootstrap<F>(n: usize, resamples: usize, level: f64, seed: u64, stat: F) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> f64,
{
    if n == 0 {
        return Err(invalid("bootstrap of an empty sample"));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(invalid("bootstrap needs resamples ≥ 1 and level in (0, 1)"));
    }
    let identity: Vec<usize> = (0..n).collect();
    let estimate = stat(&identity);
    let mut rng = rng_from_seed(seed);
    let mut idx = vec![0usize; n];
    let reps: Vec<f64> = (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            stat(&idx)
        })
        .collect();
    Ok(percentile_ci(estimate, reps, level))
}

fn percentile_ci(estimate: f64, mut reps: Vec<f64>, level: f64) -> BootstrapCi {
    let se = sample_sd(&reps);
    let resamples = reps.len();
    reps.sort_by(|a, b| a.total_cmp(b));
    // symmetric order statistics, so negating the data mirrors the interval exactly
    let k = (((1.0 - level) / 2.0) * resamples as f64).floor() as usize;
    let k = k.min((resamples - 1) / 2);
    BootstrapCi {
        estimate,
        lower: reps[k].min(estimate),
        upper: reps[resamples - 1 - k].max(estimate),
        se,
        level,
        resamples,
    }
}

/// Bootstrap of the sample mean.
pub fn bootstrap_mean(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    bootstrap(values.len(), resamples, level, seed, |idx| {
        let shift = values[idx[0]];
        shift + idx.iter().map(|&i| values[i] - shift).sum::<f64>() / idx.len() as f64
    })
}

/// Sup-distance between the empirical CDFs of `a` and `b`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("KS statistic needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let v = if a[i].total_cmp(&b[j]).is_le() { a[i] } else { b[j] };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Simulated `level` quantile of the two-sample KS statistic under the null
/// for continuous laws (uniform samples).
pub fn ks_null_quantile(na: usize, nb: usize, level: f64, reps: usize, seed: u64) -> Result<f64> {
    if na == 0 || nb == 0 || reps == 0 {
        return Err(invalid("KS null simulation needs positive sizes and repetitions"));
    }
    let mut stats: Vec<f64> = (0..reps)
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(seed, &[r as u64]));
            let a: Vec<f64> = (0..na).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.random::<f64>()).collect();
            ks_statistic(&a, &b).expect("nonempty samples")
        })
        .collect();
    stats.sort_by(|x, y| x.total_cmp(y));
    Ok(quantile_sorted(&stats, level))
}

/// Bounded Lipschitz test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Psi {
    /// 0 below `rho`, 1 above `rho + delta`, linear in between.
    Ramp { delta: f64, rho: f64 },
    /// `clamp(t, lo, hi)`
    ClippedIdentity { lo: f64, hi: f64 },
    /// `clamp(t - center, -half_width, half_width)²`
    ClippedQuadratic { center: f64, half_width: f64 },
}

impl Psi {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Psi::Ramp { delta, rho } => ((t - rho) / delta).clamp(0.0, 1.0),
            Psi::ClippedIdentity { lo, hi } => t.clamp(lo, hi),
            Psi::ClippedQuadratic { center, half_width } => (t - center).clamp(-half_width, half_width).powi(2),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Psi::Ramp { delta, .. } => 1.0 / delta,
            Psi::ClippedIdentity { .. } => 1.0,
            Psi::ClippedQuadratic { half_width, .. } => 2.0 * half_width,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Psi::Ramp { delta, rho } => format!("ramp(delta={delta:.4e},rho={rho:.4e})"),
            Psi::ClippedIdentity { lo, hi } => format!("clip-id({lo:.4e},{hi:.4e})"),
            Psi::ClippedQuadratic { center, half_width } => format!("clip-sq({center:.4e},{half_width:.4e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiDictionary {
    pub functions: Vec<Psi>,
}

impl PsiDictionary {
    /// Ramps on the `deltas × rhos` grid plus one clipped identity and one
    /// clipped quadratic.
    pub fn grid(deltas: &[f64], rhos: &[f64], clip: (f64, f64)) -> Result<Self> {
        if deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("ramp widths must be positive"));
        }
        if !(clip.0 < clip.1) {
            return Err(invalid("clip range must be increasing"));
        }
        let mut functions: Vec<Psi> = deltas
            .iter()
            .flat_map(|&delta| rhos.iter().map(move |&rho| Psi::Ramp { delta, rho }))
            .collect();
        functions.push(Psi::ClippedIdentity { lo: clip.0, hi: clip.1 });
        functions.push(Psi::ClippedQuadratic {
            center: 0.5 * (clip.0 + clip.1),
            half_width: 0.5 * (clip.1 - clip.0),
        });
        Ok(Self { functions })
    }

    /// Grid scaled to the pooled sample: ramp offsets at the pooled deciles,
    /// widths `{1/4, 1/2, 1}` of the pooled standard deviation, clip range
    /// the pooled 5%–95% quantiles.
    pub fn adaptive(pooled: &[f64]) -> Result<Self> {
        if pooled.is_empty() {
            return Err(invalid("adaptive dictionary needs data"));
        }
        let mut sorted = pooled.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let sd = sample_sd(pooled);
        let scale = if sd > 0.0 { sd } else { 1.0 };
        let deltas = [0.25 * scale, 0.5 * scale, scale];
        let rhos: Vec<f64> = (1..10).map(|k| quantile_sorted(&sorted, k as f64 / 10.0)).collect();
        let mut lo = quantile_sorted(&sorted, 0.05);
        let mut hi = quantile_sorted(&sorted, 0.95);
        if !(lo < hi) {
            lo -= scale;
            hi += scale;
        }
        Self::grid(&deltas, &rhos, (lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlGap {
    /// `|mean ψ(a) - mean ψ(b)|` for each dictionary entry.
    pub gaps: Vec<f64>,
    pub max: f64,
    pub argmax: usize,
    pub ci: BootstrapCi,
}

fn max_gap(dict: &PsiDictionary, a: &[f64], b: &[f64], ia: &[usize], ib: &[usize]) -> (Vec<f64>, f64, usize) {
    let gaps: Vec<f64> = dict
        .functions
        .iter()
        .map(|psi| {
            let ma = ia.iter().map(|&i| psi.eval(a[i])).sum::<f64>() / ia.len() as f64;
            let mb = ib.iter().map(|&i| psi.eval(b[i])).sum::<f64>() / ib.len() as f64;
            (ma - mb).abs()
        })
        .collect();
    let (argmax, max) = gaps
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    (gaps, max, argmax)
}

/// Bounded-Lipschitz gap of two samples over `dict`, with a bootstrap CI of
/// the maximum (independent resampling of each sample).
pub fn bl_gap(a: &[f64], b: &[f64], dict: &PsiDictionary, resamples: usize, seed: u64) -> Result<BlGap> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("BL gap needs two nonempty samples"));
    }
    if dict.functions.is_empty() {
        return Err(invalid("empty test-function dictionary"));
    }
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (0..b.len()).collect();
    let (gaps, max, argmax) = max_gap(dict, a, b, &ia, &ib);
    if resamples == 0 {
        return Err(invalid("bootstrap needs resamples ≥ 1"));
    }
    let (na, nb) = (a.len(), b.len());
    let mut rng = rng_from_seed(seed);
    let mut ra = vec![0usize; na];
    let mut rb = vec![0usize; nb];
    let reps: Vec<f64> = (0..resamples)
        .map(|_| {
            ra.iter_mut().for_each(|i| *i = rng.random_range(0..na));
            rb.iter_mut().for_each(|i| *i = rng.random_range(0..nb));
            max_gap(dict, a, b, &ra, &rb).1
        })
        .collect();
    let ci = percentile_ci(max, reps, 0.95);
    Ok(BlGap { gaps, max, argmax, ci })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::standard_normal_matrix;
    use proptest::prelude::*;

    fn normals(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        standard_normal_matrix(n, 1, seed).iter().map(|v| v + shift).collect()
    }

    #[test]
    fn ks_identical_multisets_is_zero() {
        let a = [3.0, 1.0, 2.0, 2.0];
        let b = [2.0, 3.0, 2.0, 1.0];
        assert_eq!(ks_statistic(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn ks_disjoint_supports_is_one() {
        assert_eq!(ks_statistic(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!(ks_statistic(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_null_calibration() {
        let threshold = 1.628 * (2.0f64 / 1000.0).sqrt();
        let below = (0..100)
            .filter(|&r| {
                let a = normals(1000, 0.0, 2 * r);
                let b = normals(1000, 0.0, 2 * r + 1);
                ks_statistic(&a, &b).unwrap() < threshold
            })
            .count();
        assert!(below >= 95, "{below}");
    }

    #[test]
    fn simulated_null_quantile_matches_asymptotics() {
        let q = ks_null_quantile(1000, 1000, 0.99, 1000, 5).unwrap();
        let asym = 1.628 * (2.0f64 / 1000.0).sqrt();
        assert!((q - asym).abs() < 0.1 * asym, "{q} vs {asym}");
    }

    #[test]
    fn bl_gap_zero_for_equal_samples() {
        let a = normals(200, 0.0, 1);
        let dict = PsiDictionary::adaptive(&a).unwrap();
        let g = bl_gap(&a, &a, &dict, 200, 3).unwrap();
        assert!(g.gaps.iter().all(|v| *v == 0.0));
        assert_eq!(g.max, 0.0);
    }

    #[test]
    fn bl_gap_ramp_hand_value() {
        let dict = PsiDictionary { functions: vec![Psi::Ramp { delta: 1.0, rho: 0.0 }] };
        let g = bl_gap(&[0.0; 5], &[1.0; 7], &dict, 100, 1).unwrap();
        assert_eq!(g.max, 1.0);
        assert!(g.ci.is_degenerate());
        assert!(bl_gap(&[], &[1.0], &dict, 10, 1).is_err());
    }

    #[test]
    fn ramp_matches_piecewise_definition() {
        let psi = Psi::Ramp { delta: 2.0, rho: 1.0 };
        assert_eq!(psi.eval(0.5), 0.0);
        assert_eq!(psi.eval(2.0), 0.5);
        assert_eq!(psi.eval(3.0), 1.0);
        assert_eq!(psi.lipschitz(), 0.5);
    }

    #[test]
    fn bl_gap_matches_oversampled_oracle() {
        let dict = PsiDictionary::grid(&[0.5, 1.0], &[-1.0, -0.5, 0.0, 0.5, 1.0, 1.5], (-2.0, 2.5)).unwrap();
        let a = normals(10_000, 0.0, 11);
        let b = normals(10_000, 0.5, 12);
        let est = bl_gap(&a, &b, &dict, 500, 13).unwrap();
        let big_a = normals(1_000_000, 0.0, 21);
        let big_b = normals(1_000_000, 0.5, 22);
        let ia: Vec<usize> = (0..big_a.len()).collect();
        let oracle = max_gap(&dict, &big_a, &big_b, &ia, &ia).1;
        assert!((est.max - oracle).abs() <= 3.0 * est.ci.se, "{} vs {oracle} (se {})", est.max, est.ci.se);
    }

    #[test]
    fn bootstrap_se_matches_standard_error() {
        let v = normals(400, 1.0, 7);
        let ci = bootstrap_mean(&v, 2000, 0.95, 9).unwrap();
        let se = sample_sd(&v) / 20.0;
        assert!((ci.se - se).abs() < 0.15 * se);
        assert!(ci.covers(ci.estimate));
    }

    #[test]
    fn single_value_gives_degenerate_interval() {
        let ci = bootstrap_mean(&[0.3], 100, 0.95, 1).unwrap();
        assert!(ci.is_degenerate() && ci.estimate == 0.3 && ci.se == 0.0);
    }

    #[test]
    fn negation_mirrors_interval_exactly() {
        let v = normals(50, 0.2, 3);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let a = bootstrap_mean(&v, 2000, 0.95, 4).unwrap();
        let b = bootstrap_mean(&neg, 2000, 0.95, 4).unwrap();
        assert_eq!(a.estimate, -b.estimate);
        assert_eq!(a.lower, -b.upper);
        assert_eq!(a.upper, -b.lower);
        assert_eq!(a.se, b.se);
    }

    proptest! {
        #[test]
        fn ks_in_unit_interval_and_symmetric(a in prop::collection::vec(-3.0f64..3.0, 1..40),
                                            b in prop::collection::vec(-3.0f64..3.0, 1..40)) {
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
        }

        #[test]
        fn bootstrap_interval_contains_estimate(v in prop::collection::vec(-10.0f64..10.0, 1..30), seed in any::<u64>()) {
            let ci = bootstrap_mean(&v, 200, 0.95, seed).unwrap();
            prop_assert!(ci.covers(ci.estimate) && ci.se >= 0.0);
        }
    }
}
