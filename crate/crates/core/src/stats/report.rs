//! Aggregation of per-case metric tables into summary, comparison and
//! Bland–Altman tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bh_adjust, bland_altman, stars, wilcoxon_rank_sum, TestMethod};
use crate::error::{Error, Result};
use crate::metrics::CaseRow;

/// Metric columns summarized and compared, in output order.
pub const METRICS: [&str; 6] = ["dsc", "lesional_dsc", "ppv", "fpr", "hd95_mm", "assd_mm"];

/// Per-case results of one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub dataset: String,
    pub method: String,
    pub rows: Vec<CaseRow>,
}

impl MetricsTable {
    /// Values of `metric`; cases without a distance are skipped.
    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| match metric {
                "dsc" => Some(r.dsc),
                "lesional_dsc" => Some(r.lesional_dsc),
                "ppv" => Some(r.ppv),
                "fpr" => Some(r.fpr),
                "hd95_mm" => r.hd95_mm,
                "assd_mm" => r.assd_mm,
                _ => None,
            })
            .collect()
    }
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub iqr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub metric: String,
    pub method_a: String,
    pub method_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub statistic: f64,
    pub test: TestMethod,
    pub p: f64,
    /// BH-adjusted over every comparison in the report.
    pub q: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanRow {
    pub dataset: String,
    pub method: String,
    pub n: usize,
    pub bias_mm3: f64,
    pub sd_mm3: f64,
    pub loa_low_mm3: f64,
    pub loa_high_mm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanPoint {
    pub dataset: String,
    pub method: String,
    pub case_id: String,
    pub mean_mm3: f64,
    pub diff_mm3: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub comparisons: Vec<ComparisonRow>,
    pub bland_altman: Vec<BlandAltmanRow>,
    pub points: Vec<BlandAltmanPoint>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

impl Report {
    /// `summary.csv`, `comparisons.csv`, `bland_altman.csv` and one
    /// `bland_altman_points_<method>.csv` per method.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("summary.csv"), &self.summary)?;
        write_csv(&dir.join("comparisons.csv"), &self.comparisons)?;
        write_csv(&dir.join("bland_altman.csv"), &self.bland_altman)?;
        let mut methods: Vec<&str> = Vec::new();
        for p in &self.points {
            if !methods.contains(&p.method.as_str()) {
                methods.push(&p.method);
            }
        }
        for m in methods {
            let rows: Vec<&BlandAltmanPoint> = self.points.iter().filter(|p| p.method == m).collect();
            write_csv(&dir.join(format!("bland_altman_points_{}.csv", file_safe(m))), &rows)?;
        }
        Ok(())
    }
}

/// Median/IQR per (dataset, method, metric); rank-sum comparisons of every
/// method pair within a dataset for every metric, BH-adjusted together;
/// Bland–Altman volume agreement per (dataset, method).
pub fn aggregate_report(tables: &[MetricsTable]) -> Result<Report> {
    for (i, a) in tables.iter().enumerate() {
        if tables[..i].iter().any(|b| b.dataset == a.dataset && b.method == a.method) {
            return Err(Error::InvalidArgument(format!(
                "duplicate table for dataset '{}', method '{}'",
                a.dataset, a.method
            )));
        }
    }
    let mut datasets: Vec<&str> = Vec::new();
    for t in tables {
        if !datasets.contains(&t.dataset.as_str()) {
            datasets.push(&t.dataset);
        }
    }

    let mut report = Report::default();
    for t in tables {
        for metric in METRICS {
            let mut v = t.values(metric);
            v.sort_by(|a, b| a.total_cmp(b));
            let stats = (!v.is_empty()).then(|| (quantile(&v, 0.5), quantile(&v, 0.25), quantile(&v, 0.75)));
            report.summary.push(SummaryRow {
                dataset: t.dataset.clone(),
                method: t.method.clone(),
                metric: metric.to_string(),
                n: v.len(),
                median: stats.map(|s| s.0),
                q1: stats.map(|s| s.1),
                q3: stats.map(|s| s.2),
                iqr: stats.map(|s| s.2 - s.1),
            });
        }
        if t.rows.len() >= 2 {
            let gt: Vec<f64> = t.rows.iter().map(|r| r.gt_volume_mm3).collect();
            let pred: Vec<f64> = t.rows.iter().map(|r| r.pred_volume_mm3).collect();
            let ba = bland_altman(&gt, &pred)?;
            report.bland_altman.push(BlandAltmanRow {
                dataset: t.dataset.clone(),
                method: t.method.clone(),
                n: t.rows.len(),
                bias_mm3: ba.bias,
                sd_mm3: ba.sd,
                loa_low_mm3: ba.loa_low,
                loa_high_mm3: ba.loa_high,
            });
            for (r, (mean, diff)) in t.rows.iter().zip(ba.points) {
                report.points.push(BlandAltmanPoint {
                    dataset: t.dataset.clone(),
                    method: t.method.clone(),
                    case_id: r.case_id.clone(),
                    mean_mm3: mean,
                    diff_mm3: diff,
                });
            }
        }
    }

    for dataset in datasets {
        let group: Vec<&MetricsTable> = tables.iter().filter(|t| t.dataset == dataset).collect();
        for metric in METRICS {
            for (i, a) in group.iter().enumerate() {
                for b in &group[i + 1..] {
                    let (va, vb) = (a.values(metric), b.values(metric));
                    if va.is_empty() || vb.is_empty() {
                        continue;
                    }
                    let t = wilcoxon_rank_sum(&va, &vb)?;
                    report.comparisons.push(ComparisonRow {
                        dataset: dataset.to_string(),
                        metric: metric.to_string(),
                        method_a: a.method.clone(),
                        method_b: b.method.clone(),
                        n_a: t.n,
                        n_b: t.m,
                        statistic: t.statistic,
                        test: t.method,
                        p: t.p_two_sided,
                        q: t.p_two_sided,
                        stars: String::new(),
                    });
                }
            }
        }
    }
    let ps: Vec<f64> = report.comparisons.iter().map(|c| c.p).collect();
    for (c, q) in report.comparisons.iter_mut().zip(bh_adjust(&ps)?) {
        c.q = q;
        c.stars = stars(q).to_string();
    }
    Ok(report)
}
