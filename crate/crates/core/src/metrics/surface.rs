//! Surfel-based surface distances: exposed voxel faces as surface elements,
//! nearest-neighbour distances between two surfaces, HD95 and ASSD.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::LesionMask;

/// Surface elements of a mask: face centres in world mm and face areas in mm².
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfelSet {
    pub positions: Vec<[f64; 3]>,
    pub areas: Vec<f64>,
}

impl SurfelSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }
}

/// One surfel per foreground face whose neighbour across the face is
/// background or outside the grid.
pub fn extract_surfels(mask: &LesionMask) -> SurfelSet {
    let geom = mask.geom();
    let dims = geom.dims();
    let s = geom.spacing();
    let face_area = [s[1] * s[2], s[0] * s[2], s[0] * s[1]];
    let data = mask.data();
    let mut out = SurfelSet::default();
    for (i, _) in data.iter().enumerate().filter(|(_, &on)| on) {
        let c = geom.coords(i);
        for axis in 0..3 {
            for dir in [-1i64, 1] {
                let mut n = [c[0] as i64, c[1] as i64, c[2] as i64];
                n[axis] += dir;
                let exposed = n[axis] < 0
                    || n[axis] >= dims[axis] as i64
                    || !data[geom.index(n[0] as usize, n[1] as usize, n[2] as usize)];
                if exposed {
                    let mut p = [c[0] as f64, c[1] as f64, c[2] as f64];
                    p[axis] += 0.5 * dir as f64;
                    out.positions.push(geom.voxel_to_world(p));
                    out.areas.push(face_area[axis]);
                }
            }
        }
    }
    out
}

/// Uniform-grid index over point positions for exact nearest-neighbour
/// queries.
struct PointGrid<'a> {
    points: &'a [[f64; 3]],
    origin: [f64; 3],
    cell: f64,
    dims: [i64; 3],
    /// Cell start offsets into `order`, x-fastest, length n_cells + 1.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-9)).collect();
        let volume: f64 = extent.iter().product();
        // a few points per cell, at most 256 cells along the longest axis
        let mut cell = (volume / points.len() as f64).cbrt() * 1.5;
        let max_extent = extent.iter().cloned().fold(0.0, f64::max);
        cell = cell.max(max_extent / 256.0).max(1e-6);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as i64 + 1).max(1));
        let n_cells = (dims[0] * dims[1] * dims[2]) as usize;
        let mut counts = vec![0usize; n_cells + 1];
        let cell_of: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell).floor() as i64).clamp(0, dims[a] - 1));
                (c[0] + dims[0] * (c[1] + dims[1] * c[2])) as usize
            })
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: counts,
            order,
        }
    }

    fn scan_cell(&self, c: [i64; 3], q: &[f64; 3], best: &mut f64) {
        let idx = (c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])) as usize;
        for &i in &self.order[self.starts[idx]..self.starts[idx + 1]] {
            let p = &self.points[i];
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            if d2 < *best {
                *best = d2;
            }
        }
    }

    /// Exact Euclidean distance from `q` to the nearest indexed point.
    fn nearest(&self, q: &[f64; 3]) -> f64 {
        let qc = [0, 1, 2].map(|a| ((q[a] - self.origin[a]) / self.cell).floor() as i64);
        // Chebyshev cell distance from qc to the grid box: rings below it are empty.
        let r0 = (0..3)
            .map(|a| (-qc[a]).max(qc[a] - (self.dims[a] - 1)).max(0))
            .max()
            .unwrap();
        let r_max = (0..3)
            .map(|a| qc[a].abs().max((qc[a] - (self.dims[a] - 1)).abs()))
            .max()
            .unwrap();
        let mut best = f64::INFINITY;
        for r in r0..=r_max {
            let lo = [0, 1, 2].map(|a| (qc[a] - r).max(0));
            let hi = [0, 1, 2].map(|a| (qc[a] + r).min(self.dims[a] - 1));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    let shell = (z - qc[2]).abs() == r || (y - qc[1]).abs() == r;
                    if shell {
                        for x in lo[0]..=hi[0] {
                            self.scan_cell([x, y, z], q, &mut best);
                        }
                    } else {
                        // r > 0 here: only the two x faces of the ring
                        for x in [qc[0] - r, qc[0] + r] {
                            if x >= lo[0] && x <= hi[0] {
                                self.scan_cell([x, y, z], q, &mut best);
                            }
                        }
                    }
                }
            }
            // Any point in ring r + 1 or beyond is at least r cells away.
            let bound = r as f64 * self.cell;
            if best <= bound * bound {
                break;
            }
        }
        best.sqrt()
    }
}

/// For every surfel of `a`: (distance to the nearest surfel position of
/// `b`, own area).
pub fn directed_distance_set(a: &SurfelSet, b: &SurfelSet) -> Result<Vec<(f64, f64)>> {
    if b.is_empty() {
        return Err(Error::EmptySurface);
    }
    let grid = PointGrid::new(&b.positions);
    Ok(a.positions
        .par_iter()
        .zip(a.areas.par_iter())
        .map(|(p, &area)| (grid.nearest(p), area))
        .collect())
}

/// Smallest observed distance whose area-weighted cumulative fraction
/// reaches `fraction`.
pub fn directed_percentile(distances: &[(f64, f64)], fraction: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::EmptySurface);
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = sorted.iter().map(|d| d.1).sum();
    let mut cum = 0.0;
    for &(d, area) in &sorted {
        cum += area;
        if cum / total >= fraction - 1e-12 {
            return Ok(d);
        }
    }
    Ok(sorted.last().unwrap().0)
}

/// Symmetric 95th-percentile Hausdorff distance: the larger of the two
/// directed values.
pub fn hd95(a: &SurfelSet, b: &SurfelSet) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptySurface);
    }
    let ab = directed_percentile(&directed_distance_set(a, b)?, 0.95)?;
    let ba = directed_percentile(&directed_distance_set(b, a)?, 0.95)?;
    Ok(ab.max(ba))
}

/// Area-weighted average symmetric surface distance.
pub fn assd(a: &SurfelSet, b: &SurfelSet) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptySurface);
    }
    let ab = directed_distance_set(a, b)?;
    let ba = directed_distance_set(b, a)?;
    let weighted: f64 = ab.iter().chain(&ba).map(|(d, w)| d * w).sum();
    Ok(weighted / (a.total_area() + b.total_area()))
}

/// Surface area of a mask in mm².
pub fn surface_area_mm2(mask: &LesionMask) -> f64 {
    extract_surfels(mask).total_area()
}
