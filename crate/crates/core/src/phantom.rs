//! Small synthetic brain-like phantoms: nested ellipsoids for CSF, cortex,
//! white matter and deep grey matter, with spherical lesions scattered in
//! the white matter. Used for desk-scale runs and tests.

use rand::Rng;

use crate::rng::RngStream;
use crate::volume::{Geometry, LabelVolume, LesionMask, Volume};

pub const BACKGROUND: u16 = 0;
pub const CSF: u16 = 1;
pub const CORTEX: u16 = 2;
pub const WHITE_MATTER: u16 = 3;
pub const DEEP_GM: u16 = 4;
pub const LESION: u16 = 5;
pub const VENTRICLE: u16 = 6;

pub fn class_names() -> Vec<String> {
    ["background", "csf", "cortex", "white_matter", "deep_gm", "lesion", "ventricle"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Parcellation without lesions plus a lesion mask confined to white
/// matter. Lesion centres and radii come from `stream`.
pub fn brain(dims: [usize; 3], n_lesions: usize, stream: &RngStream) -> (LabelVolume, LesionMask) {
    let geom = Geometry::isotropic(dims);
    let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let r = dims.map(|d| d as f64 / 2.0);
    let q = |p: [usize; 3], s: f64| -> f64 {
        (0..3).map(|a| ((p[a] as f64 - c[a]) / (r[a] * s)).powi(2)).sum::<f64>()
    };
    let labels = Volume::from_fn(geom.clone(), |p| {
        let rel_ventricle: f64 = {
            // two small lateral blobs
            let off = r[0] * 0.18;
            let left = [(p[0] as f64 - (c[0] - off)) / (r[0] * 0.1), (p[1] as f64 - c[1]) / (r[1] * 0.25), (p[2] as f64 - c[2]) / (r[2] * 0.15)];
            let right = [(p[0] as f64 - (c[0] + off)) / (r[0] * 0.1), left[1], left[2]];
            let ql = left.iter().map(|v| v * v).sum::<f64>();
            let qr = right.iter().map(|v| v * v).sum::<f64>();
            ql.min(qr)
        };
        if q(p, 0.95) > 1.0 {
            BACKGROUND
        } else if q(p, 0.85) > 1.0 {
            CSF
        } else if q(p, 0.72) > 1.0 {
            CORTEX
        } else if rel_ventricle <= 1.0 {
            VENTRICLE
        } else if q(p, 0.2) <= 1.0 {
            DEEP_GM
        } else {
            WHITE_MATTER
        }
    });
    let parc = LabelVolume::from_volume(labels, class_names()).expect("labels below K");

    let mut rng = stream.rng();
    let mut mask = LesionMask::empty(geom.clone());
    let wm: Vec<usize> = parc
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == WHITE_MATTER)
        .map(|(i, _)| i)
        .collect();
    if wm.is_empty() {
        return (parc, mask);
    }
    let max_radius = (dims.iter().min().copied().unwrap_or(1) as f64 / 10.0).max(1.0);
    for _ in 0..n_lesions {
        let centre = geom.coords(wm[rng.gen_range(0..wm.len())]);
        let radius: f64 = 0.8 + rng.gen::<f64>() * max_radius;
        let ri = radius.ceil() as i64;
        for dz in -ri..=ri {
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if ((dx * dx + dy * dy + dz * dz) as f64) > radius * radius {
                        continue;
                    }
                    let p = [centre[0] as i64 + dx, centre[1] as i64 + dy, centre[2] as i64 + dz];
                    if !geom.contains(p) {
                        continue;
                    }
                    let i = geom.index(p[0] as usize, p[1] as usize, p[2] as usize);
                    if parc.data()[i] == WHITE_MATTER {
                        mask.data_mut()[i] = true;
                    }
                }
            }
        }
    }
    (parc, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_has_all_tissue_classes_and_lesions_in_wm() {
        let (parc, mask) = brain([32, 32, 32], 6, &RngStream::new(1));
        let h = parc.histogram();
        for class in [BACKGROUND, CSF, CORTEX, WHITE_MATTER, DEEP_GM, VENTRICLE] {
            assert!(h[class as usize] >= 2, "class {class} missing: {h:?}");
        }
        assert_eq!(h[LESION as usize], 0);
        assert!(mask.count() > 0);
        for (m, l) in mask.data().iter().zip(parc.data()) {
            if *m {
                assert_eq!(*l, WHITE_MATTER);
            }
        }
    }

    #[test]
    fn phantom_is_deterministic() {
        let a = brain([24, 24, 24], 4, &RngStream::new(3));
        let b = brain([24, 24, 24], 4, &RngStream::new(3));
        assert_eq!(a, b);
    }
}
