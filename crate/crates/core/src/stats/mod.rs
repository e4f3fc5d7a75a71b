//! Group comparisons and agreement analysis: Wilcoxon rank-sum test,
//! Benjamini–Hochberg adjustment, significance stars, Bland–Altman.

pub mod report;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use report::{aggregate_report, quantile, MetricsTable, Report, METRICS};

use crate::error::{Error, Result};

/// Largest per-sample size for which the exact null distribution is used.
pub const EXACT_MAX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Rank sum of the first sample.
    pub statistic: f64,
    pub p_two_sided: f64,
    pub method: TestMethod,
    pub n: usize,
    pub m: usize,
}

/// Mid-ranks (1-based) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon rank-sum test of a location shift between `x` and `y`.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> Result<TestResult> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptySample);
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in rank-sum sample".into()));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let w: f64 = ranks[..n].iter().sum();
    let (p, method) = if n <= EXACT_MAX && m <= EXACT_MAX {
        (exact_p(&ranks, n), TestMethod::Exact)
    } else {
        (normal_p(&ranks, n, m, w), TestMethod::NormalApprox)
    };
    Ok(TestResult {
        statistic: w,
        p_two_sided: p,
        method,
        n,
        m,
    })
}

/// Exact two-sided p over all `C(N, n)` equally likely rank assignments,
/// counted by dynamic programming on doubled (integer) mid-ranks.
fn exact_p(ranks: &[f64], n: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let observed: usize = doubled[..n].iter().sum();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0f64; max_sum + 1]; n + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n).rev() {
            let (lower, upper) = counts.split_at_mut(k);
            let prev = &lower[k - 1];
            let cur = &mut upper[0];
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let dist = &counts[n];
    let total: f64 = dist.iter().sum();
    let le: f64 = dist[..=observed].iter().sum();
    let ge: f64 = dist[observed..].iter().sum();
    (2.0 * le.min(ge) / total).min(1.0)
}

/// Normal approximation with tie-corrected variance and continuity
/// correction 0.5.
fn normal_p(ranks: &[f64], n: usize, m: usize, w: f64) -> f64 {
    let big_n = (n + m) as f64;
    let mean = n as f64 * (big_n + 1.0) / 2.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let var = n as f64 * m as f64 / 12.0 * ((big_n + 1.0) - tie_sum / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    let n = pvals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut out = vec![0.0; n];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let q = if rank + 1 == n { pvals[i] } else { pvals[i] * n as f64 / (rank + 1) as f64 };
        running = running.min(q);
        out[i] = running.min(1.0);
    }
    Ok(out)
}

/// `***` for p < 0.001, `**` for p < 0.01, `*` for p < 0.05, else `ns`.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    /// Mean of `gt - pred`.
    pub bias: f64,
    /// Sample standard deviation of the differences.
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `(mean of pair, gt - pred)` per case, in input order.
    pub points: Vec<(f64, f64)>,
}

/// Sum in ascending order so that permuting the cases cannot change the
/// result.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v.iter().sum()
}

pub fn bland_altman(gt: &[f64], pred: &[f64]) -> Result<BlandAltman> {
    if gt.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "Bland-Altman needs paired samples, got {} and {}",
            gt.len(),
            pred.len()
        )));
    }
    if gt.len() < 2 {
        return Err(Error::InvalidArgument("Bland-Altman needs at least 2 cases".into()));
    }
    let diffs: Vec<f64> = gt.iter().zip(pred).map(|(g, p)| g - p).collect();
    let n = diffs.len() as f64;
    let bias = ordered_sum(diffs.clone()) / n;
    let sd = (ordered_sum(diffs.iter().map(|d| (d - bias).powi(2)).collect()) / (n - 1.0)).sqrt();
    Ok(BlandAltman {
        bias,
        sd,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        points: gt.iter().zip(pred).map(|(g, p)| ((g + p) / 2.0, g - p)).collect(),
    })
}
