//! Random spatial augmentation: affine (rotation, scaling, shearing about the
//! grid centre) plus a diffeomorphic displacement integrated from a
//! stationary velocity field.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{uniform, Range};
use crate::volume::{mat4_apply, Geometry, LabelVolume, Mat4, Volume, IDENTITY4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialAugmentConfig {
    /// Per-axis rotation angle, degrees.
    pub rotation_deg: Range,
    /// Per-axis scale factor.
    pub scale: Range,
    /// Per off-diagonal (xy, xz, yz) shear factor.
    pub shear: Range,
    /// Standard deviation of the velocity field at control nodes, mm.
    pub svf_std: Range,
    /// Control grid has `dims / svf_grid_divisor` nodes per axis ...
    pub svf_grid_divisor: usize,
    /// ... but never fewer than this.
    pub svf_min_nodes: usize,
    pub svf_steps: u32,
}

impl Default for SpatialAugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: [-15.0, 15.0],
            scale: [0.8, 1.2],
            shear: [-0.012, 0.012],
            svf_std: [0.0, 4.0],
            svf_grid_divisor: 8,
            svf_min_nodes: 4,
            svf_steps: 8,
        }
    }
}

impl SpatialAugmentConfig {
    /// No spatial change at all.
    pub fn identity() -> Self {
        Self {
            rotation_deg: [0.0, 0.0],
            scale: [1.0, 1.0],
            shear: [0.0, 0.0],
            svf_std: [0.0, 0.0],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: [f64; 3],
    pub scale: [f64; 3],
    /// xy, xz, yz
    pub shear: [f64; 3],
}

impl AffineParams {
    pub fn sample(cfg: &SpatialAugmentConfig, rng: &mut impl Rng) -> Self {
        let mut p = AffineParams {
            rotation_deg: [0.0; 3],
            scale: [1.0; 3],
            shear: [0.0; 3],
        };
        for a in 0..3 {
            p.rotation_deg[a] = uniform(rng, cfg.rotation_deg);
        }
        for a in 0..3 {
            p.scale[a] = uniform(rng, cfg.scale);
        }
        for a in 0..3 {
            p.shear[a] = uniform(rng, cfg.shear);
        }
        p
    }

    /// `Rz · Ry · Rx · diag(scale) · shear`, where shear is unit upper
    /// triangular.
    pub fn linear(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rotation_deg.map(f64::to_radians);
        let rx = [[1.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin()], [0.0, ax.sin(), ax.cos()]];
        let ry = [[ay.cos(), 0.0, ay.sin()], [0.0, 1.0, 0.0], [-ay.sin(), 0.0, ay.cos()]];
        let rz = [[az.cos(), -az.sin(), 0.0], [az.sin(), az.cos(), 0.0], [0.0, 0.0, 1.0]];
        let s = self.scale;
        let [sxy, sxz, syz] = self.shear;
        let sh = [[s[0], s[0] * sxy, s[0] * sxz], [0.0, s[1], s[1] * syz], [0.0, 0.0, s[2]]];
        mul3(&mul3(&mul3(&rz, &ry), &rx), &sh)
    }

    /// Voxel-space matrix applying the linear part about `center`.
    pub fn matrix_about(&self, center: [f64; 3]) -> Mat4 {
        let l = self.linear();
        let mut m = IDENTITY4;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = l[i][j];
            }
            m[i][3] = center[i] - (0..3).map(|k| l[i][k] * center[k]).sum::<f64>();
        }
        m
    }
}

fn mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn grid_center(geom: &Geometry) -> [f64; 3] {
    geom.dims().map(|d| (d as f64 - 1.0) / 2.0)
}

/// Random voxel-space affine about the grid centre.
pub fn sample_affine(cfg: &SpatialAugmentConfig, geom: &Geometry, rng: &mut impl Rng) -> Mat4 {
    AffineParams::sample(cfg, rng).matrix_about(grid_center(geom))
}

/// Displacement per voxel, in mm along the voxel axes.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    geom: Geometry,
    displacement: Vec<[f32; 3]>,
}

impl DeformationField {
    pub fn zero(geom: &Geometry) -> Self {
        Self {
            geom: geom.clone(),
            displacement: vec![[0.0; 3]; geom.n_voxels()],
        }
    }

    pub fn from_voxel_units(geom: &Geometry, disp_vox: Vec<[f64; 3]>) -> Self {
        let sp = geom.spacing();
        Self {
            geom: geom.clone(),
            displacement: disp_vox
                .into_iter()
                .map(|d| [(d[0] * sp[0]) as f32, (d[1] * sp[1]) as f32, (d[2] * sp[2]) as f32])
                .collect(),
        }
    }

    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn displacement_mm(&self) -> &[[f32; 3]] {
        &self.displacement
    }

    pub fn voxel_units(&self, i: usize) -> [f64; 3] {
        let sp = self.geom.spacing();
        let d = self.displacement[i];
        [d[0] as f64 / sp[0], d[1] as f64 / sp[1], d[2] as f64 / sp[2]]
    }

    pub fn is_zero(&self) -> bool {
        self.displacement.iter().all(|d| *d == [0.0; 3])
    }

    pub fn mean_magnitude_mm(&self) -> f64 {
        let n = self.displacement.len() as f64;
        self.displacement
            .iter()
            .map(|d| ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt())
            .sum::<f64>()
            / n
    }
}

/// Trilinear upsampling of a corner-aligned control grid to `dims`.
///
/// Node `i` of an axis with `g` nodes sits at voxel `i * (n - 1) / (g - 1)`.
pub fn upsample_control_grid<const C: usize>(grid: [usize; 3], nodes: &[[f64; C]], dims: [usize; 3]) -> Vec<[f64; C]> {
    let axis_weights = |a: usize| -> Vec<(usize, usize, f64)> {
        (0..dims[a])
            .map(|x| {
                if grid[a] == 1 || dims[a] == 1 {
                    return (0, 0, 0.0);
                }
                let t = x as f64 * (grid[a] - 1) as f64 / (dims[a] - 1) as f64;
                let i0 = (t.floor() as usize).min(grid[a] - 2);
                (i0, i0 + 1, t - i0 as f64)
            })
            .collect()
    };
    let (wx, wy, wz) = (axis_weights(0), axis_weights(1), axis_weights(2));
    let node = |x: usize, y: usize, z: usize| &nodes[x + grid[0] * (y + grid[1] * z)];
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for &(z0, z1, tz) in &wz {
        for &(y0, y1, ty) in &wy {
            for &(x0, x1, tx) in &wx {
                let mut v = [0.0; C];
                let corners = [
                    (x0, y0, z0, (1.0 - tx) * (1.0 - ty) * (1.0 - tz)),
                    (x1, y0, z0, tx * (1.0 - ty) * (1.0 - tz)),
                    (x0, y1, z0, (1.0 - tx) * ty * (1.0 - tz)),
                    (x1, y1, z0, tx * ty * (1.0 - tz)),
                    (x0, y0, z1, (1.0 - tx) * (1.0 - ty) * tz),
                    (x1, y0, z1, tx * (1.0 - ty) * tz),
                    (x0, y1, z1, (1.0 - tx) * ty * tz),
                    (x1, y1, z1, tx * ty * tz),
                ];
                for (cx, cy, cz, w) in corners {
                    if w == 0.0 {
                        continue;
                    }
                    let n = node(cx, cy, cz);
                    for c in 0..C {
                        v[c] += w * n[c];
                    }
                }
                out.push(v);
            }
        }
    }
    out
}

pub fn svf_control_grid(dims: [usize; 3], cfg: &SpatialAugmentConfig) -> [usize; 3] {
    dims.map(|d| (d / cfg.svf_grid_divisor.max(1)).max(cfg.svf_min_nodes).max(2))
}

/// Velocity field in voxel units: i.i.d. Gaussian nodes (std in mm),
/// trilinearly upsampled.
pub fn sample_velocity(geom: &Geometry, svf_std_mm: f64, grid: [usize; 3], rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let sp = geom.spacing();
    let n_nodes = grid[0] * grid[1] * grid[2];
    let nodes: Vec<[f64; 3]> = (0..n_nodes)
        .map(|_| {
            let mut v = [0.0; 3];
            for (a, c) in v.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *c = z * svf_std_mm / sp[a];
            }
            v
        })
        .collect();
    upsample_control_grid(grid, &nodes, geom.dims())
}

fn sample_vec_field(dims: [usize; 3], field: &[[f64; 3]], p: [f64; 3]) -> [f64; 3] {
    let mut idx = [[0usize; 2]; 3];
    let mut w = [[0.0f64; 2]; 3];
    for a in 0..3 {
        let n = dims[a] as i64;
        let f = p[a].floor();
        let t = p[a] - f;
        idx[a] = [(f as i64).clamp(0, n - 1) as usize, (f as i64 + 1).clamp(0, n - 1) as usize];
        w[a] = [1.0 - t, t];
    }
    let mut out = [0.0; 3];
    for k in 0..2 {
        for j in 0..2 {
            for i in 0..2 {
                let wt = w[0][i] * w[1][j] * w[2][k];
                let v = &field[idx[0][i] + dims[0] * (idx[1][j] + dims[1] * idx[2][k])];
                for c in 0..3 {
                    out[c] += wt * v[c];
                }
            }
        }
    }
    out
}

/// Scaling and squaring: `u = v / 2^steps`, then `steps` times
/// `u(x) <- u(x) + u(x + u(x))`.
pub fn integrate_velocity(geom: &Geometry, velocity: &[[f64; 3]], steps: u32) -> DeformationField {
    let dims = geom.dims();
    let scale = 0.5f64.powi(steps as i32);
    let mut u: Vec<[f64; 3]> = velocity.iter().map(|v| v.map(|c| c * scale)).collect();
    for _ in 0..steps {
        let prev = &u;
        u = (0..prev.len())
            .into_par_iter()
            .map(|i| {
                let c = geom.coords(i);
                let d = prev[i];
                let p = [c[0] as f64 + d[0], c[1] as f64 + d[1], c[2] as f64 + d[2]];
                let s = sample_vec_field(dims, prev, p);
                [d[0] + s[0], d[1] + s[1], d[2] + s[2]]
            })
            .collect();
    }
    DeformationField::from_voxel_units(geom, u)
}

pub fn sample_svf_deformation(
    geom: &Geometry,
    svf_std_mm: f64,
    cfg: &SpatialAugmentConfig,
    rng: &mut impl Rng,
) -> DeformationField {
    if svf_std_mm <= 0.0 {
        return DeformationField::zero(geom);
    }
    let grid = svf_control_grid(geom.dims(), cfg);
    let v = sample_velocity(geom, svf_std_mm, grid, rng);
    integrate_velocity(geom, &v, cfg.svf_steps)
}

/// Per-voxel `|u1(x) + u2(x + u1(x))|` in voxels; near zero when `second`
/// inverts `first`.
pub fn composition_residual(first: &DeformationField, second: &DeformationField) -> Vec<f64> {
    let geom = first.geom();
    let dims = geom.dims();
    let second_vox: Vec<[f64; 3]> = (0..geom.n_voxels()).map(|i| second.voxel_units(i)).collect();
    (0..geom.n_voxels())
        .map(|i| {
            let c = geom.coords(i);
            let d = first.voxel_units(i);
            let p = [c[0] as f64 + d[0], c[1] as f64 + d[1], c[2] as f64 + d[2]];
            let s = sample_vec_field(dims, &second_vox, p);
            ((d[0] + s[0]).powi(2) + (d[1] + s[1]).powi(2) + (d[2] + s[2]).powi(2)).sqrt()
        })
        .collect()
}

/// Backward warp with nearest-neighbour lookup: output voxel `x` reads the
/// input at `affine · (x + u(x))`. Positions outside the grid read class 0.
pub fn warp_labels(parc: &LabelVolume, affine: &Mat4, field: &DeformationField) -> crate::Result<LabelVolume> {
    let geom = parc.geom();
    geom.ensure_same(field.geom(), "warp_labels")?;
    let dims = geom.dims();
    let src = parc.data();
    let data: Vec<u16> = (0..geom.n_voxels())
        .into_par_iter()
        .map(|i| {
            let c = geom.coords(i);
            let d = field.voxel_units(i);
            let p = mat4_apply(affine, [c[0] as f64 + d[0], c[1] as f64 + d[1], c[2] as f64 + d[2]]);
            let q = p.map(|v| v.round() as i64);
            if (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64) {
                src[geom.index(q[0] as usize, q[1] as usize, q[2] as usize)]
            } else {
                0
            }
        })
        .collect();
    LabelVolume::from_volume(Volume::new(geom.clone(), data)?, parc.class_names().to_vec())
}

/// Translation by whole voxels: output `x` reads input `x - shift`.
pub fn translation(shift: [f64; 3]) -> Mat4 {
    let mut m = IDENTITY4;
    for a in 0..3 {
        m[a][3] = -shift[a];
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::volume::default_class_names;

    #[test]
    fn degenerate_ranges_give_identity() {
        let cfg = SpatialAugmentConfig::identity();
        let g = Geometry::isotropic([9, 9, 9]);
        let m = sample_affine(&cfg, &g, &mut RngStream::new(1).rng());
        for i in 0..4 {
            for j in 0..4 {
                assert!((m[i][j] - IDENTITY4[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = AffineParams {
            rotation_deg: [0.0, 0.0, 90.0],
            scale: [1.0; 3],
            shear: [0.0; 3],
        };
        let l = p.linear();
        let expect = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((l[i][j] - expect[i][j]).abs() < 1e-12);
            }
        }
        // centre is a fixed point
        let m = p.matrix_about([4.0, 4.0, 4.0]);
        let c = mat4_apply(&m, [4.0, 4.0, 4.0]);
        assert!(c.iter().all(|v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn zero_std_gives_zero_field() {
        let g = Geometry::isotropic([8, 8, 8]);
        let f = sample_svf_deformation(&g, 0.0, &SpatialAugmentConfig::default(), &mut RngStream::new(0).rng());
        assert!(f.is_zero());
    }

    #[test]
    fn control_grid_size() {
        let cfg = SpatialAugmentConfig::default();
        assert_eq!(svf_control_grid([64, 24, 200], &cfg), [8, 4, 25]);
    }

    #[test]
    fn upsample_hits_nodes() {
        let grid = [3, 2, 2];
        let nodes: Vec<[f64; 1]> = (0..12).map(|i| [i as f64]).collect();
        let dims = [5, 3, 4];
        let up = upsample_control_grid(grid, &nodes, dims);
        let at = |x: usize, y: usize, z: usize| up[x + 5 * (y + 3 * z)][0];
        assert_eq!(at(0, 0, 0), 0.0);
        assert_eq!(at(2, 0, 0), 1.0);
        assert_eq!(at(4, 2, 3), 11.0);
        assert!((at(1, 0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_warp_and_integer_shift() {
        let g = Geometry::isotropic([6, 2, 1]);
        let parc = LabelVolume::new(g.clone(), (0..12).map(|i| (i % 6) as u16).collect(), default_class_names(6)).unwrap();
        let zero = DeformationField::zero(&g);
        assert_eq!(warp_labels(&parc, &IDENTITY4, &zero).unwrap(), parc);
        let shifted = warp_labels(&parc, &translation([3.0, 0.0, 0.0]), &zero).unwrap();
        assert_eq!(&shifted.data()[..6], &[0, 0, 0, 0, 1, 2]);
    }
}
