//! Segmentation evaluation: voxelwise confusion metrics, lesion-wise DSC and
//! surface distances.

pub mod surface;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use surface::{assd, directed_distance_set, directed_percentile, extract_surfels, hd95, SurfelSet};

use crate::error::{Error, Result};
use crate::morphology::{connected_components, ComponentMap, Connectivity};
use crate::volume::LesionMask;

/// Lesions at or below this volume are ignored by lesion-wise counting.
pub const MIN_LESION_MM3: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(gt: &LesionMask, pred: &LesionMask) -> Result<ConfusionCounts> {
    gt.geom().ensure_same(pred.geom(), "confusion")?;
    let mut c = ConfusionCounts::default();
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        match (g, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `TP / (TP + FP)`; 0 for an empty prediction, 1 when both masks are empty.
pub fn ppv(c: &ConfusionCounts) -> f64 {
    match (c.tp + c.fp, c.fn_) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (d, _) => c.tp as f64 / d as f64,
    }
}

/// `TP / (TP + FN)`; 1 when the ground truth is empty.
pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    match c.tp + c.fn_ {
        0 => 1.0,
        d => c.tp as f64 / d as f64,
    }
}

/// `FP / (FP + TN)`.
pub fn fpr(c: &ConfusionCounts) -> Result<f64> {
    match c.fp + c.tn {
        0 => Err(Error::NoNegatives),
        d => Ok(c.fp as f64 / d as f64),
    }
}

/// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
pub fn dsc(c: &ConfusionCounts) -> f64 {
    match 2 * c.tp + c.fp + c.fn_ {
        0 => 1.0,
        d => 2.0 * c.tp as f64 / d as f64,
    }
}

/// Drop components of `min_mm3` or less, renumbering the rest.
pub fn filter_small_lesions(cm: &ComponentMap, min_mm3: f64) -> ComponentMap {
    cm.retain(|id| cm.volume_mm3(id) > min_mm3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LesionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Component-level detection counts: a ground-truth lesion is detected when
/// it shares at least one voxel with the predicted foreground, a predicted
/// lesion is false when it shares none with the ground-truth foreground.
pub fn lesion_counts(gt: &ComponentMap, pred: &ComponentMap) -> Result<LesionCounts> {
    gt.geom().ensure_same(pred.geom(), "lesion-wise counting")?;
    let mut gt_hit = vec![false; gt.n_components() + 1];
    let mut pred_hit = vec![false; pred.n_components() + 1];
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        if g > 0 && p > 0 {
            gt_hit[g as usize] = true;
            pred_hit[p as usize] = true;
        }
    }
    let tp = gt_hit[1..].iter().filter(|&&h| h).count();
    Ok(LesionCounts {
        tp,
        fn_: gt.n_components() - tp,
        fp: pred_hit[1..].iter().filter(|&&h| !h).count(),
    })
}

/// Lesion-wise DSC `2TP / (2TP + FP + FN)` over components; 1 when both
/// maps are empty.
pub fn lesional_dsc(gt: &ComponentMap, pred: &ComponentMap) -> Result<f64> {
    let c = lesion_counts(gt, pred)?;
    Ok(match 2 * c.tp + c.fp + c.fn_ {
        0 => 1.0,
        d => 2.0 * c.tp as f64 / d as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub min_lesion_mm3: f64,
    pub connectivity: Connectivity,
    /// Also remove small lesions before the voxelwise metrics.
    pub filter_voxel_metrics: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            min_lesion_mm3: MIN_LESION_MM3,
            connectivity: Connectivity::TwentySix,
            filter_voxel_metrics: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub dsc: f64,
    pub lesional_dsc: f64,
    pub ppv: f64,
    pub fpr: f64,
    pub hd95_mm: Option<f64>,
    pub assd_mm: Option<f64>,
    pub pred_empty: bool,
    pub gt_volume_mm3: f64,
    pub pred_volume_mm3: f64,
}

pub fn evaluate_case(gt: &LesionMask, pred: &LesionMask) -> Result<CaseMetrics> {
    evaluate_case_with(gt, pred, &EvalConfig::default())
}

/// All per-case metrics. An empty prediction against a non-empty ground
/// truth scores 0 on every overlap metric and has no distances.
pub fn evaluate_case_with(gt: &LesionMask, pred: &LesionMask, cfg: &EvalConfig) -> Result<CaseMetrics> {
    gt.geom().ensure_same(pred.geom(), "evaluate_case")?;
    let gt_cm = filter_small_lesions(&connected_components(gt, cfg.connectivity), cfg.min_lesion_mm3);
    let pred_cm = filter_small_lesions(&connected_components(pred, cfg.connectivity), cfg.min_lesion_mm3);
    let (gt_v, pred_v) = if cfg.filter_voxel_metrics {
        (gt_cm.foreground(), pred_cm.foreground())
    } else {
        (gt.clone(), pred.clone())
    };
    let c = confusion(&gt_v, &pred_v)?;
    let pred_empty = c.tp + c.fp == 0;
    let gt_empty = c.tp + c.fn_ == 0;
    let fpr = fpr(&c)?;
    let (dsc, ppv, lesional_dsc) = if pred_empty && !gt_empty {
        (0.0, 0.0, 0.0)
    } else {
        (dsc(&c), ppv(&c), lesional_dsc(&gt_cm, &pred_cm)?)
    };
    let (hd95_mm, assd_mm) = if pred_empty || gt_empty {
        (None, None)
    } else {
        let a = extract_surfels(&gt_v);
        let b = extract_surfels(&pred_v);
        (Some(hd95(&a, &b)?), Some(assd(&a, &b)?))
    };
    Ok(CaseMetrics {
        dsc,
        lesional_dsc,
        ppv,
        fpr,
        hd95_mm,
        assd_mm,
        pred_empty,
        gt_volume_mm3: gt.volume_mm3(),
        pred_volume_mm3: pred.volume_mm3(),
    })
}

/// One CSV row of per-case results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub dsc: f64,
    pub lesional_dsc: f64,
    pub ppv: f64,
    pub fpr: f64,
    pub hd95_mm: Option<f64>,
    pub assd_mm: Option<f64>,
    pub pred_empty: bool,
    pub gt_volume_mm3: f64,
    pub pred_volume_mm3: f64,
}

impl CaseRow {
    pub fn new(case_id: impl Into<String>, m: &CaseMetrics) -> Self {
        Self {
            case_id: case_id.into(),
            dsc: m.dsc,
            lesional_dsc: m.lesional_dsc,
            ppv: m.ppv,
            fpr: m.fpr,
            hd95_mm: m.hd95_mm,
            assd_mm: m.assd_mm,
            pred_empty: m.pred_empty,
            gt_volume_mm3: m.gt_volume_mm3,
            pred_volume_mm3: m.pred_volume_mm3,
        }
    }
}

pub fn write_case_csv(path: impl AsRef<Path>, rows: &[CaseRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_case_csv(path: impl AsRef<Path>) -> Result<Vec<CaseRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, Volume};

    fn mask(dims: [usize; 3], on: &[[usize; 3]]) -> LesionMask {
        Volume::from_fn(Geometry::isotropic(dims), |p| on.contains(&p))
    }

    #[test]
    fn hand_counts() {
        let c = ConfusionCounts { tp: 3, fp: 1, fn_: 0, tn: 10 };
        assert_eq!(ppv(&c), 0.75);
        let c = ConfusionCounts { tp: 0, fp: 2, fn_: 0, tn: 98 };
        assert_eq!(fpr(&c).unwrap(), 0.02);
        let c = ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 0 };
        assert_eq!(dsc(&c), 0.5);
        let all_positive = ConfusionCounts { tp: 5, fp: 0, fn_: 3, tn: 0 };
        assert!(matches!(fpr(&all_positive), Err(Error::NoNegatives)));
    }

    #[test]
    fn empty_conventions() {
        let both = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 8 };
        assert_eq!((dsc(&both), ppv(&both), fpr(&both).unwrap()), (1.0, 1.0, 0.0));
        let pred_empty = ConfusionCounts { tp: 0, fp: 0, fn_: 4, tn: 4 };
        assert_eq!(ppv(&pred_empty), 0.0);
    }

    #[test]
    fn small_lesion_filter_is_strict() {
        let m = mask([6, 6, 6], &[[0, 0, 0], [1, 0, 0], [4, 4, 4], [4, 4, 5], [4, 5, 4], [5, 4, 4]]);
        let cm = connected_components(&m, Connectivity::TwentySix);
        assert_eq!(cm.n_components(), 2);
        let f = filter_small_lesions(&cm, 3.0);
        assert_eq!(f.n_components(), 1);
        assert_eq!(f.voxel_count(1), 4);
        let three = mask([4, 4, 4], &[[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        let cm = connected_components(&three, Connectivity::TwentySix);
        assert_eq!(filter_small_lesions(&cm, 3.0).n_components(), 0);
    }

    #[test]
    fn lesional_half() {
        let gt = mask([10, 10, 10], &[[1, 1, 1], [7, 7, 7]]);
        let pred = mask([10, 10, 10], &[[1, 1, 1], [4, 1, 8]]);
        let g = connected_components(&gt, Connectivity::TwentySix);
        let p = connected_components(&pred, Connectivity::TwentySix);
        assert_eq!(lesion_counts(&g, &p).unwrap(), LesionCounts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!(lesional_dsc(&g, &p).unwrap(), 0.5);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let blob: Vec<[usize; 3]> = (2..5).flat_map(|x| (2..5).map(move |y| [x, y, 3])).collect();
        let gt = mask([8, 8, 8], &blob);
        let m = evaluate_case(&gt, &gt).unwrap();
        assert_eq!((m.dsc, m.lesional_dsc, m.ppv, m.fpr), (1.0, 1.0, 1.0, 0.0));
        assert_eq!((m.hd95_mm, m.assd_mm), (Some(0.0), Some(0.0)));
        assert!(!m.pred_empty);
        let empty = LesionMask::empty(gt.geom().clone());
        let m = evaluate_case(&gt, &empty).unwrap();
        assert_eq!((m.dsc, m.lesional_dsc, m.ppv, m.fpr), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((m.hd95_mm, m.assd_mm), (None, None));
        assert!(m.pred_empty);
        assert_eq!(m.gt_volume_mm3, 9.0);
    }

    #[test]
    fn csv_round_trip_with_nulls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let gt = mask([4, 4, 4], &[[1, 1, 1]]);
        let rows = vec![
            CaseRow::new("a", &evaluate_case(&gt, &gt).unwrap()),
            CaseRow::new("b", &evaluate_case(&gt, &LesionMask::empty(gt.geom().clone())).unwrap()),
        ];
        write_case_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "case_id,dsc,lesional_dsc,ppv,fpr,hd95_mm,assd_mm,pred_empty,gt_volume_mm3,pred_volume_mm3\n"
        ));
        assert_eq!(read_case_csv(&path).unwrap(), rows);
    }
}
