//! Voxel grids and the operations shared by every other module: NIfTI-1 I/O,
//! RAS reorientation, resampling and z-score normalization.
//!
//! All grids store voxels x-fastest: `idx = x + nx * (y + ny * z)`.

mod geometry;
pub mod nifti;
mod normalize;
mod reorient;
mod resample;

pub use geometry::{
    affine_inverse, det3, inv3, linear_part, mat4_apply, mat4_mul, Geometry, Mat4, IDENTITY4,
};
pub use nifti::{read_nifti, read_nifti_bytes, write_nifti, write_nifti_bytes, AnyVolume, ToNifti};
pub use normalize::zscore_normalize;
pub use reorient::{reorient_ras, ras_reorientation, Reorientation};
pub use resample::{resample, resample_to, respaced_geometry, sample_at, Interpolation, Resample};

use crate::error::{Error, Result};

/// A dense 3D grid of `T` sharing one [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    geom: Geometry,
    data: Vec<T>,
}

/// Intensity image.
pub type ScalarVolume = Volume<f32>;

/// Binary lesion mask.
pub type LesionMask = Volume<bool>;

impl<T> Volume<T> {
    pub fn new(geom: Geometry, data: Vec<T>) -> Result<Self> {
        if data.len() != geom.n_voxels() {
            return Err(Error::InvalidGeometry(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geom.dims()
            )));
        }
        Ok(Self { geom, data })
    }

    pub fn from_fn(geom: Geometry, mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let data = (0..geom.n_voxels()).map(|i| f(geom.coords(i))).collect();
        Self { geom, data }
    }

    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.geom.index(x, y, z)]
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Volume<U> {
        Volume {
            geom: self.geom.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn with_geometry(self, geom: Geometry) -> Result<Self> {
        Volume::new(geom, self.data)
    }
}

impl<T: Clone> Volume<T> {
    pub fn filled(geom: Geometry, value: T) -> Self {
        let n = geom.n_voxels();
        Self {
            geom,
            data: vec![value; n],
        }
    }
}

impl Volume<f32> {
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Volume<bool> {
    pub fn empty(geom: Geometry) -> Self {
        Self::filled(geom, false)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn volume_mm3(&self) -> f64 {
        self.count() as f64 * self.geom.voxel_volume_mm3()
    }
}

/// Parcellation with `K = class_names.len()` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    labels: Volume<u16>,
    class_names: Vec<String>,
}

impl LabelVolume {
    pub fn new(geom: Geometry, data: Vec<u16>, class_names: Vec<String>) -> Result<Self> {
        Self::from_volume(Volume::new(geom, data)?, class_names)
    }

    pub fn from_volume(labels: Volume<u16>, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "label volume needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if class_names.len() > u16::MAX as usize + 1 {
            return Err(Error::InvalidArgument("too many classes".into()));
        }
        let k = class_names.len();
        if let Some(bad) = labels.data().iter().find(|&&l| l as usize >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} is not below K = {k}")));
        }
        Ok(Self { labels, class_names })
    }

    /// Generic class names `class_0 .. class_{k-1}`.
    pub fn with_k(labels: Volume<u16>, k: usize) -> Result<Self> {
        Self::from_volume(labels, default_class_names(k))
    }

    /// K is taken as `max label + 1` (at least 2).
    pub fn from_labels(labels: Volume<u16>) -> Result<Self> {
        let k = labels.data().iter().copied().max().unwrap_or(0) as usize + 1;
        Self::with_k(labels, k.max(2))
    }

    pub fn geom(&self) -> &Geometry {
        self.labels.geom()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.labels.dims()
    }

    pub fn data(&self) -> &[u16] {
        self.labels.data()
    }

    pub fn labels(&self) -> &Volume<u16> {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    /// Voxel count per class, indexed by label.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.k()];
        for &l in self.data() {
            h[l as usize] += 1;
        }
        h
    }

    pub fn mask_of(&self, class: u16) -> LesionMask {
        self.labels.map(|&l| l == class)
    }

    pub fn to_scalar(&self) -> ScalarVolume {
        self.labels.map(|&l| l as f32)
    }
}

pub fn default_class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_dims() {
        let g = Geometry::isotropic([2, 2, 2]);
        assert!(Volume::new(g.clone(), vec![0.0f32; 7]).is_err());
        assert!(Volume::new(g, vec![0.0f32; 8]).is_ok());
    }

    #[test]
    fn labels_must_be_below_k() {
        let g = Geometry::isotropic([2, 1, 1]);
        assert!(LabelVolume::new(g.clone(), vec![0, 2], default_class_names(2)).is_err());
        assert!(LabelVolume::new(g.clone(), vec![0, 1], default_class_names(1)).is_err());
        let lv = LabelVolume::new(g, vec![0, 1], default_class_names(3)).unwrap();
        assert_eq!(lv.histogram(), vec![1, 1, 0]);
    }

    #[test]
    fn mask_volume_uses_spacing() {
        let g = Geometry::from_spacing([4, 1, 1], [1.0, 1.0, 3.0]).unwrap();
        let m = Volume::new(g, vec![true, true, false, true]).unwrap();
        assert_eq!(m.count(), 3);
        assert!((m.volume_mm3() - 9.0).abs() < 1e-12);
    }
}
