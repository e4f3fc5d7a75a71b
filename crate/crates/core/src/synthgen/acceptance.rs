//! Effect-size (EF) acceptance test for synthetic scans: a scan is kept only
//! when lesion and white matter are more separable than most class pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Population mean/SD of the intensities of every class, indexed by label.
pub fn class_stats(img: &ScalarVolume, parc: &LabelVolume) -> Result<Vec<ClassStats>> {
    img.geom().ensure_same(parc.geom(), "class statistics")?;
    let k = parc.k();
    let mut n = vec![0usize; k];
    let mut sum = vec![0.0f64; k];
    for (&v, &l) in img.data().iter().zip(parc.data()) {
        n[l as usize] += 1;
        sum[l as usize] += v as f64;
    }
    let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let mut ss = vec![0.0f64; k];
    for (&v, &l) in img.data().iter().zip(parc.data()) {
        ss[l as usize] += (v as f64 - mean[l as usize]).powi(2);
    }
    Ok((0..k)
        .map(|c| ClassStats {
            n: n[c],
            mean: mean[c],
            std: if n[c] > 0 { (ss[c] / n[c] as f64).sqrt() } else { 0.0 },
        })
        .collect())
}

/// `|mean_a - mean_b| / (std_a + std_b)`. Two zero-spread classes give 0
/// when their means agree and +∞ otherwise.
pub fn effect_size_from_stats(a: &ClassStats, b: &ClassStats) -> f64 {
    let diff = (a.mean - b.mean).abs();
    let spread = a.std + b.std;
    if spread == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / spread
    }
}

pub fn effect_size(img: &ScalarVolume, parc: &LabelVolume, class_a: u16, class_b: u16) -> Result<f64> {
    let stats = class_stats(img, parc)?;
    let get = |c: u16| -> Result<ClassStats> {
        match stats.get(c as usize) {
            Some(s) if s.n >= 2 => Ok(*s),
            Some(s) => Err(Error::EffectSize(format!("class {c} has {} voxel(s), need at least 2", s.n))),
            None => Err(Error::EffectSize(format!("class {c} is absent"))),
        }
    };
    Ok(effect_size_from_stats(&get(class_a)?, &get(class_b)?))
}

/// Nearest-rank percentile: the `ceil(p / 100 · n)`-th smallest value.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEffect {
    pub a: u16,
    pub b: u16,
    pub ef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub accepted: bool,
    pub ef_lesion_wm: f64,
    pub threshold: f64,
    pub percentile: f64,
    pub pairwise: Vec<PairEffect>,
}

/// Accept iff EF(lesion, WM) is strictly above the nearest-rank percentile
/// of the EFs of all unordered pairs of classes present (≥ 2 voxels),
/// the lesion/WM pair included.
pub fn accept_scan(
    img: &ScalarVolume,
    parc: &LabelVolume,
    lesion_class: u16,
    wm_class: u16,
    ef_percentile: f64,
) -> Result<AcceptanceReport> {
    if !(ef_percentile > 0.0 && ef_percentile < 100.0) {
        return Err(Error::InvalidArgument(format!("EF percentile {ef_percentile} outside (0, 100)")));
    }
    let stats = class_stats(img, parc)?;
    let present: Vec<u16> = (0..stats.len()).filter(|&c| stats[c].n >= 2).map(|c| c as u16).collect();
    if present.len() < 3 {
        return Err(Error::DegenerateParcellation(present.len()));
    }
    for (c, what) in [(lesion_class, "lesion"), (wm_class, "white matter")] {
        if !present.contains(&c) {
            return Err(Error::EffectSize(format!("{what} class {c} is not present")));
        }
    }
    let mut pairwise = Vec::with_capacity(present.len() * (present.len() - 1) / 2);
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            pairwise.push(PairEffect {
                a,
                b,
                ef: effect_size_from_stats(&stats[a as usize], &stats[b as usize]),
            });
        }
    }
    let ef_lesion_wm = effect_size_from_stats(&stats[lesion_class as usize], &stats[wm_class as usize]);
    let mut sorted: Vec<f64> = pairwise.iter().map(|p| p.ef).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let threshold = nearest_rank(&sorted, ef_percentile);
    Ok(AcceptanceReport {
        accepted: ef_lesion_wm > threshold,
        ef_lesion_wm,
        threshold,
        percentile: ef_percentile,
        pairwise,
    })
}
