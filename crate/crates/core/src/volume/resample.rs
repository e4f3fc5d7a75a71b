use rayon::prelude::*;

use super::{mat4_apply, mat4_mul, Geometry, LabelVolume, LesionMask, ScalarVolume, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Trilinear,
    /// Separable Catmull-Rom cubic.
    Tricubic,
}

impl Interpolation {
    fn name(self) -> &'static str {
        match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Trilinear => "trilinear",
            Interpolation::Tricubic => "tricubic",
        }
    }
}

#[inline]
fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

#[inline]
fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Nearest voxel to continuous index `p`, clamped to the grid.
#[inline]
pub(crate) fn nearest_index(geom: &Geometry, p: [f64; 3]) -> usize {
    let d = geom.dims();
    let x = clamp_index(p[0].round() as i64, d[0]);
    let y = clamp_index(p[1].round() as i64, d[1]);
    let z = clamp_index(p[2].round() as i64, d[2]);
    geom.index(x, y, z)
}

/// Interpolate `data` at continuous voxel index `p`. Out-of-extent positions
/// clamp to the edge.
pub fn sample_at(geom: &Geometry, data: &[f32], p: [f64; 3], mode: Interpolation) -> f64 {
    let d = geom.dims();
    match mode {
        Interpolation::Nearest => data[nearest_index(geom, p)] as f64,
        Interpolation::Trilinear => {
            let mut idx = [[0usize; 2]; 3];
            let mut w = [[0.0f64; 2]; 3];
            for a in 0..3 {
                let f = p[a].floor();
                let t = p[a] - f;
                idx[a] = [clamp_index(f as i64, d[a]), clamp_index(f as i64 + 1, d[a])];
                w[a] = [1.0 - t, t];
            }
            let mut acc = 0.0;
            for (k, wz) in w[2].iter().enumerate() {
                for (j, wy) in w[1].iter().enumerate() {
                    let row = d[0] * (idx[1][j] + d[1] * idx[2][k]);
                    acc += wz * wy * (w[0][0] * data[row + idx[0][0]] as f64 + w[0][1] * data[row + idx[0][1]] as f64);
                }
            }
            acc
        }
        Interpolation::Tricubic => {
            let mut idx = [[0usize; 4]; 3];
            let mut w = [[0.0f64; 4]; 3];
            for a in 0..3 {
                let f = p[a].floor();
                let t = p[a] - f;
                for k in 0..4 {
                    let off = k as i64 - 1;
                    idx[a][k] = clamp_index(f as i64 + off, d[a]);
                    w[a][k] = catmull_rom(t - off as f64);
                }
            }
            let mut acc = 0.0;
            for k in 0..4 {
                for j in 0..4 {
                    let row = d[0] * (idx[1][j] + d[1] * idx[2][k]);
                    let mut line = 0.0;
                    for i in 0..4 {
                        line += w[0][i] * data[row + idx[0][i]] as f64;
                    }
                    acc += w[2][k] * w[1][j] * line;
                }
            }
            acc
        }
    }
}

/// Maps target voxel index → source voxel index.
fn index_map(src: &Geometry, target: &Geometry) -> super::Mat4 {
    mat4_mul(&src.world_to_voxel_matrix(), target.affine())
}

fn resample_f32(vol: &ScalarVolume, target: &Geometry, mode: Interpolation) -> ScalarVolume {
    let m = index_map(vol.geom(), target);
    let src_geom = vol.geom();
    let src = vol.data();
    let data: Vec<f32> = (0..target.n_voxels())
        .into_par_iter()
        .map(|i| {
            let c = target.coords(i);
            let p = mat4_apply(&m, [c[0] as f64, c[1] as f64, c[2] as f64]);
            sample_at(src_geom, src, p, mode) as f32
        })
        .collect();
    Volume::new(target.clone(), data).expect("sized from target geometry")
}

fn resample_nearest<T: Copy + Send + Sync>(vol: &Volume<T>, target: &Geometry) -> Volume<T> {
    let m = index_map(vol.geom(), target);
    let src_geom = vol.geom();
    let src = vol.data();
    let data: Vec<T> = (0..target.n_voxels())
        .into_par_iter()
        .map(|i| {
            let c = target.coords(i);
            let p = mat4_apply(&m, [c[0] as f64, c[1] as f64, c[2] as f64]);
            src[nearest_index(src_geom, p)]
        })
        .collect();
    Volume::new(target.clone(), data).expect("sized from target geometry")
}

/// Geometry with the same orientation and first-voxel position but a new
/// spacing; dims are `ceil(dims * spacing / target)`.
pub fn respaced_geometry(geom: &Geometry, target_spacing: [f64; 3]) -> Result<Geometry> {
    if target_spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be positive, got {target_spacing:?}"
        )));
    }
    let dims = geom.dims();
    let spacing = geom.spacing();
    let mut out_dims = [0usize; 3];
    let mut affine = *geom.affine();
    for a in 0..3 {
        let extent = dims[a] as f64 * spacing[a] / target_spacing[a];
        out_dims[a] = ((extent - 1e-9).ceil() as usize).max(1);
        let f = target_spacing[a] / spacing[a];
        for row in affine.iter_mut().take(3) {
            row[a] *= f;
        }
    }
    Geometry::new(out_dims, affine)
}

/// Volumes that can be resampled onto another grid.
pub trait Resample: Sized {
    fn resample_to(&self, target: &Geometry, mode: Interpolation) -> Result<Self>;
    fn geometry(&self) -> &Geometry;
}

impl Resample for ScalarVolume {
    fn resample_to(&self, target: &Geometry, mode: Interpolation) -> Result<Self> {
        Ok(resample_f32(self, target, mode))
    }
    fn geometry(&self) -> &Geometry {
        self.geom()
    }
}

impl Resample for LesionMask {
    fn resample_to(&self, target: &Geometry, mode: Interpolation) -> Result<Self> {
        if mode != Interpolation::Nearest {
            return Err(Error::InterpolationOnLabels(mode.name()));
        }
        Ok(resample_nearest(self, target))
    }
    fn geometry(&self) -> &Geometry {
        self.geom()
    }
}

impl Resample for LabelVolume {
    fn resample_to(&self, target: &Geometry, mode: Interpolation) -> Result<Self> {
        if mode != Interpolation::Nearest {
            return Err(Error::InterpolationOnLabels(mode.name()));
        }
        LabelVolume::from_volume(resample_nearest(self.labels(), target), self.class_names().to_vec())
    }
    fn geometry(&self) -> &Geometry {
        self.geom()
    }
}

pub fn resample<V: Resample>(vol: &V, target_spacing: [f64; 3], mode: Interpolation) -> Result<V> {
    let target = respaced_geometry(vol.geometry(), target_spacing)?;
    vol.resample_to(&target, mode)
}

pub fn resample_to<V: Resample>(vol: &V, target: &Geometry, mode: Interpolation) -> Result<V> {
    vol.resample_to(target, mode)
}
