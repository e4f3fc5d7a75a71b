//! Consistency checks of a generated dataset against its manifest.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{Manifest, TripletRecord};
use crate::volume::{read_nifti, LesionMask};

pub const CHECK_NAMES: [&str; 8] = [
    "record_count",
    "files_present",
    "geometry",
    "gt_matches_labels",
    "intensity_clip",
    "acceptance",
    "prior_empty_flag",
    "forbidden_overlap",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// One line per violation.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

type Failures = BTreeMap<&'static str, Vec<String>>;

fn fail(f: &mut Failures, check: &'static str, msg: String) {
    f.entry(check).or_default().push(msg);
}

/// Verify every record of `manifest` against the files under `root`.
pub fn verify_manifest(manifest: &Manifest, root: &Path) -> VerifyReport {
    let mut failures: Failures = BTreeMap::new();
    let expected = manifest.expected_records();
    if manifest.records.len() != expected {
        fail(
            &mut failures,
            "record_count",
            format!("{} records, expected {expected}", manifest.records.len()),
        );
    }

    let mut by_scan: BTreeMap<&str, Vec<&TripletRecord>> = BTreeMap::new();
    for r in &manifest.records {
        by_scan.entry(r.labels.as_str()).or_default().push(r);
    }
    let per_scan: Vec<Failures> = by_scan
        .into_par_iter()
        .map(|(_, records)| verify_scan(manifest, root, &records))
        .collect();
    for f in per_scan {
        for (k, v) in f {
            failures.entry(k).or_default().extend(v);
        }
    }

    VerifyReport {
        checks: CHECK_NAMES
            .iter()
            .map(|&name| {
                let f = failures.remove(name).unwrap_or_default();
                CheckResult {
                    name: name.to_string(),
                    passed: f.is_empty(),
                    failures: f,
                }
            })
            .collect(),
    }
}

fn verify_scan(manifest: &Manifest, root: &Path, records: &[&TripletRecord]) -> Failures {
    let mut f = Failures::new();
    let cfg = &manifest.config;
    let first = records[0];
    let mut paths = vec![&first.image, &first.gt, &first.labels];
    paths.extend(records.iter().map(|r| &r.prior));
    let mut missing = false;
    for p in &paths {
        if !root.join(p).is_file() {
            fail(&mut f, "files_present", format!("missing {}", root.join(p).display()));
            missing = true;
        }
    }
    if missing {
        return f;
    }
    let read = |p: &str| read_nifti(root.join(p));
    let (image, gt, labels) = match (read(&first.image), read(&first.gt), read(&first.labels)) {
        (Ok(i), Ok(g), Ok(l)) => (i.into_scalar(), g.into_mask(), l),
        (a, b, c) => {
            for (p, r) in [(&first.image, a.err()), (&first.gt, b.err()), (&first.labels, c.err())] {
                if let Some(e) = r {
                    fail(&mut f, "files_present", format!("unreadable {p}: {e}"));
                }
            }
            return f;
        }
    };
    let labels = match labels.into_labels() {
        Ok(l) => l,
        Err(e) => {
            fail(&mut f, "files_present", format!("{}: not a label volume: {e}", first.labels));
            return f;
        }
    };

    let geom = labels.geom();
    for (p, g) in [(&first.image, image.geom()), (&first.gt, gt.geom())] {
        if !g.approx_eq(geom, 1e-4) {
            fail(&mut f, "geometry", format!("{p} does not match {}", first.labels));
        }
    }
    let expected_gt = labels.mask_of(cfg.lesion_class);
    if gt.data() != expected_gt.data() {
        fail(
            &mut f,
            "gt_matches_labels",
            format!("{} differs from lesion class of {}", first.gt, first.labels),
        );
    }
    let max = image.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max as f64 > cfg.synth.clip_max {
        fail(
            &mut f,
            "intensity_clip",
            format!("{} reaches {max} > {}", first.image, cfg.synth.clip_max),
        );
    }
    let forbidden = |mask: &LesionMask| -> usize {
        mask.data()
            .iter()
            .zip(labels.data())
            .filter(|(&m, l)| m && cfg.forbidden_classes.contains(l))
            .count()
    };
    let n = forbidden(&gt);
    if n > 0 {
        fail(&mut f, "forbidden_overlap", format!("{}: {n} voxel(s) on forbidden classes", first.gt));
    }

    for r in records {
        let a = &r.acceptance;
        if !(a.accepted && a.ef_lesion_wm > a.threshold) {
            fail(
                &mut f,
                "acceptance",
                format!("{}: EF {} not above threshold {}", r.image, a.ef_lesion_wm, a.threshold),
            );
        }
        let prior = match read(&r.prior) {
            Ok(v) => v.into_mask(),
            Err(e) => {
                fail(&mut f, "files_present", format!("unreadable {}: {e}", r.prior));
                continue;
            }
        };
        if !prior.geom().approx_eq(geom, 1e-4) {
            fail(&mut f, "geometry", format!("{} does not match {}", r.prior, r.labels));
            continue;
        }
        let count = prior.count();
        if (count == 0) != r.prior_is_empty || count != r.prior_voxels {
            fail(
                &mut f,
                "prior_empty_flag",
                format!(
                    "{}: {count} voxel(s) but recorded prior_is_empty={} prior_voxels={}",
                    r.prior, r.prior_is_empty, r.prior_voxels
                ),
            );
        }
        let n = forbidden(&prior);
        if n > 0 {
            fail(&mut f, "forbidden_overlap", format!("{}: {n} voxel(s) on forbidden classes", r.prior));
        }
    }
    f
}
