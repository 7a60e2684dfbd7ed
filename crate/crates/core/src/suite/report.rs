//! Per-family, per-size summaries of matched trials.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{bl_gap, bootstrap_mean, ks_null_quantile, ks_statistic, sample_sd, BootstrapCi, PsiDictionary};
use super::trials::{TrialResult, CONTROL_ID};
use crate::error::{invalid, Result};
use crate::harness::io::fmt_f64;
use crate::rng::{derive_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub resamples: usize,
    pub ks_null_reps: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            resamples: super::stats::DEFAULT_RESAMPLES,
            ks_null_reps: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlSummary {
    pub max: f64,
    pub argmax: String,
    pub ci: BootstrapCi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRecord {
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    pub quarantined: usize,
    /// Signed mean of `R̂*(X) - R̂*(G)` over trials.
    pub train_gap: BootstrapCi,
    pub bl_gap: BlSummary,
    pub ks: f64,
    pub ks_null_q99: f64,
    /// Signed mean of `R^x(Θ̂^X) - R^g(Θ̂^G)`.
    pub test_gap: BootstrapCi,
    /// `sqrt(var_x / T + var_g / T)` of the two test-risk samples.
    pub test_gap_combined_se: f64,
    /// Confidence intervals have zero width (fewer than two trials).
    pub degenerate_ci: bool,
}

impl SizeRecord {
    pub fn ks_below_null(&self) -> bool {
        self.ks < self.ks_null_q99
    }

    pub fn gap_within(&self, multiple: f64) -> bool {
        self.train_gap.estimate.abs() <= multiple * self.train_gap.se
    }

    pub fn test_gap_within(&self, multiple: f64) -> bool {
        self.test_gap.estimate.abs() <= multiple * self.test_gap_combined_se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub abs_gaps: Vec<f64>,
    /// Ladder positions `k` where `|gap_{k+1}| > |gap_k|`.
    pub inversions: Vec<usize>,
    /// At most one inversion, no larger than the SE of the difference.
    pub non_increasing: bool,
    pub ci_covers_zero_at_largest: bool,
    pub within_3se_at_largest: bool,
    pub universality_holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub sizes: Vec<SizeRecord>,
    pub trend: TrendSummary,
    /// Present for the null-calibration family only.
    pub null_calibration: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityReport {
    pub families: Vec<FamilyReport>,
    pub quarantined_trials: Vec<String>,
}

pub fn size_record(results: &[&TrialResult], cfg: &ReportConfig, seed: u64) -> Result<SizeRecord> {
    let first = results.first().ok_or_else(|| invalid("no trials for this size"))?;
    let valid: Vec<&&TrialResult> = results.iter().filter(|r| !r.is_quarantined()).collect();
    let quarantined = results.len() - valid.len();
    if valid.is_empty() {
        return Err(invalid(format!("all trials quarantined for {} n={}", first.family, first.n)));
    }
    let a: Vec<f64> = valid.iter().map(|r| r.x.train_opt).collect();
    let b: Vec<f64> = valid.iter().map(|r| r.g.train_opt).collect();
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, g)| x - g).collect();
    let train_gap = bootstrap_mean(&diffs, cfg.resamples, 0.95, derive_seed(seed, &[1]))?;
    let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    let dict = PsiDictionary::adaptive(&pooled)?;
    let bl = bl_gap(&a, &b, &dict, cfg.resamples, derive_seed(seed, &[2]))?;
    let ks = ks_statistic(&a, &b)?;
    let ks_null_q99 = ks_null_quantile(a.len(), b.len(), 0.99, cfg.ks_null_reps, derive_seed(seed, &[3]))?;
    let tx: Vec<f64> = valid.iter().map(|r| r.x.test_x.mean).collect();
    let tg: Vec<f64> = valid.iter().map(|r| r.g.test_g.mean).collect();
    let tdiff: Vec<f64> = tx.iter().zip(&tg).map(|(x, g)| x - g).collect();
    let test_gap = bootstrap_mean(&tdiff, cfg.resamples, 0.95, derive_seed(seed, &[4]))?;
    let t = valid.len() as f64;
    let test_gap_combined_se = (sample_sd(&tx).powi(2) / t + sample_sd(&tg).powi(2) / t).sqrt();
    Ok(SizeRecord {
        n: first.n,
        p: first.p,
        trials: valid.len(),
        quarantined,
        degenerate_ci: train_gap.is_degenerate(),
        train_gap,
        bl_gap: BlSummary {
            max: bl.max,
            argmax: dict.functions[bl.argmax].label(),
            ci: bl.ci,
        },
        ks,
        ks_null_q99,
        test_gap,
        test_gap_combined_se,
    })
}

pub fn trend(sizes: &[SizeRecord]) -> TrendSummary {
    let abs_gaps: Vec<f64> = sizes.iter().map(|s| s.train_gap.estimate.abs()).collect();
    let inversions: Vec<usize> = (1..sizes.len()).filter(|&k| abs_gaps[k] > abs_gaps[k - 1]).map(|k| k - 1).collect();
    let non_increasing = match inversions.as_slice() {
        [] => true,
        [k] => {
            let se = sizes[*k].train_gap.se.hypot(sizes[k + 1].train_gap.se);
            abs_gaps[k + 1] - abs_gaps[*k] <= se
        }
        _ => false,
    };
    let last = sizes.last();
    let ci_covers_zero_at_largest = last.is_some_and(|s| s.train_gap.covers(0.0));
    let within_3se_at_largest = last.is_some_and(|s| s.gap_within(3.0));
    TrendSummary {
        abs_gaps,
        inversions,
        non_increasing,
        ci_covers_zero_at_largest,
        within_3se_at_largest,
        universality_holds: ci_covers_zero_at_largest && non_increasing,
    }
}

/// Group by family (ascending id) and size (ascending `n`).
pub fn build_report(results: &[TrialResult], cfg: &ReportConfig) -> Result<UniversalityReport> {
    if results.is_empty() {
        return Err(invalid("no trial results to report"));
    }
    let mut groups: BTreeMap<&str, BTreeMap<usize, Vec<&TrialResult>>> = BTreeMap::new();
    for r in results {
        groups.entry(&r.family).or_default().entry(r.n).or_default().push(r);
    }
    let mut families = Vec::new();
    for (family, by_n) in groups {
        let sizes = by_n
            .iter()
            .map(|(&n, rs)| size_record(rs, cfg, derive_seed(cfg.seed, &[tag(family), n as u64])))
            .collect::<Result<Vec<_>>>()?;
        let trend = trend(&sizes);
        let null_calibration = (family == CONTROL_ID).then(|| {
            if trend.ci_covers_zero_at_largest {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        });
        families.push(FamilyReport {
            family: family.to_string(),
            sizes,
            trend,
            null_calibration,
        });
    }
    let quarantined_trials = results
        .iter()
        .filter(|r| r.is_quarantined())
        .map(|r| format!("{} n={} trial={}", r.family, r.n, r.trial))
        .collect();
    Ok(UniversalityReport {
        families,
        quarantined_trials,
    })
}

pub const GAP_CSV_HEADER: [&str; 19] = [
    "family", "n", "p", "trials", "quarantined", "gap_mean", "gap_lower", "gap_upper", "gap_se", "test_gap_mean",
    "test_gap_lower", "test_gap_upper", "test_gap_combined_se", "bl_max", "bl_lower", "bl_upper", "ks", "ks_null_q99",
    "degenerate_ci",
];

/// Plot-ready gap-versus-n rows.
pub fn gap_rows(report: &UniversalityReport) -> Vec<Vec<String>> {
    report
        .families
        .iter()
        .flat_map(|f| {
            f.sizes.iter().map(move |s| {
                vec![
                    f.family.clone(),
                    s.n.to_string(),
                    s.p.to_string(),
                    s.trials.to_string(),
                    s.quarantined.to_string(),
                    fmt_f64(s.train_gap.estimate),
                    fmt_f64(s.train_gap.lower),
                    fmt_f64(s.train_gap.upper),
                    fmt_f64(s.train_gap.se),
                    fmt_f64(s.test_gap.estimate),
                    fmt_f64(s.test_gap.lower),
                    fmt_f64(s.test_gap.upper),
                    fmt_f64(s.test_gap_combined_se),
                    fmt_f64(s.bl_gap.max),
                    fmt_f64(s.bl_gap.ci.lower),
                    fmt_f64(s.bl_gap.ci.upper),
                    fmt_f64(s.ks),
                    fmt_f64(s.ks_null_q99),
                    s.degenerate_ci.to_string(),
                ]
            })
        })
        .collect()
}
