use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat4 = [[f64; 4]; 4];

pub const IDENTITY4: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat4_apply(m: &Mat4, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    }
    out
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn linear_part(m: &Mat4) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[i][j];
        }
    }
    out
}

pub fn inv3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = det3(m);
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if !det.is_finite() || scale == 0.0 || det.abs() <= 1e-12 * scale.powi(3) {
        return None;
    }
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let inv = [
        [c(1, 1, 2, 2), -c(0, 1, 2, 2), c(0, 1, 1, 2)],
        [-c(1, 0, 2, 2), c(0, 0, 2, 2), -c(0, 0, 1, 2)],
        [c(1, 0, 2, 1), -c(0, 0, 2, 1), c(0, 0, 1, 1)],
    ];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = inv[i][j] / det;
        }
    }
    Some(out)
}

/// Inverse of an affine 4×4 (last row assumed `[0, 0, 0, 1]`).
pub fn affine_inverse(m: &Mat4) -> Option<Mat4> {
    let lin = inv3(&linear_part(m))?;
    let mut out = IDENTITY4;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = lin[i][j];
        }
        out[i][3] = -(0..3).map(|k| lin[i][k] * m[k][3]).sum::<f64>();
    }
    Some(out)
}

/// Voxel grid shape plus the voxel-index → world-mm mapping.
///
/// `spacing` is always the column norms of the affine's linear part, so the
/// two can never disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Mat4,
}

impl Geometry {
    pub fn new(dims: [usize; 3], affine: Mat4) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!("dims must be positive, got {dims:?}")));
        }
        if affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("affine has non-finite entries".into()));
        }
        if affine_inverse(&affine).is_none() {
            return Err(Error::SingularAffine);
        }
        let mut spacing = [0.0; 3];
        for (j, s) in spacing.iter_mut().enumerate() {
            *s = (0..3).map(|i| affine[i][j] * affine[i][j]).sum::<f64>().sqrt();
        }
        let mut affine = affine;
        affine[3] = [0.0, 0.0, 0.0, 1.0];
        Ok(Self { dims, spacing, affine })
    }

    /// Axis-aligned geometry with the first voxel centred at the world origin.
    pub fn from_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!("spacing must be positive, got {spacing:?}")));
        }
        let mut affine = IDENTITY4;
        for i in 0..3 {
            affine[i][i] = spacing[i];
        }
        Self::new(dims, affine)
    }

    pub fn isotropic(dims: [usize; 3]) -> Self {
        Self::from_spacing(dims, [1.0; 3]).expect("positive dims and spacing")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Mat4 {
        &self.affine
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Linear index with x varying fastest.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let r = idx / self.dims[0];
        [x, r % self.dims[1], r / self.dims[1]]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        mat4_apply(&self.affine, p)
    }

    pub fn world_to_voxel_matrix(&self) -> Mat4 {
        affine_inverse(&self.affine).expect("geometry affine is invertible by construction")
    }

    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        mat4_apply(&self.world_to_voxel_matrix(), p)
    }

    /// Same grid, within `tol` on every affine entry.
    pub fn approx_eq(&self, other: &Geometry, tol: f64) -> bool {
        self.dims == other.dims
            && self
                .affine
                .iter()
                .flatten()
                .zip(other.affine.iter().flatten())
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.approx_eq(other, 1e-4) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )))
        }
    }
}
