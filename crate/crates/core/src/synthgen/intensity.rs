//! Label-conditioned GMM intensities and the corruptions applied on top:
//! multiplicative bias field, anisotropic acquisition simulation, clipping.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spatial::upsample_control_grid;
use super::{uniform, Range};
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarVolume, Volume};

/// Per-class Gaussian intensity parameters, indexed by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl GmmParams {
    pub fn sample(k: usize, mu_range: Range, sigma_range: Range, rng: &mut impl Rng) -> Self {
        let mut means = Vec::with_capacity(k);
        let mut stds = Vec::with_capacity(k);
        for _ in 0..k {
            means.push(uniform(rng, mu_range));
            stds.push(uniform(rng, sigma_range));
        }
        Self { means, stds }
    }

    pub fn len(&self) -> usize {
        self.means.len().min(self.stds.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Each voxel drawn independently from `Normal(mean[label], std[label])`,
/// in linear voxel order from `rng`.
pub fn sample_gmm_image(parc: &LabelVolume, params: &GmmParams, rng: &mut impl Rng) -> Result<ScalarVolume> {
    let present = parc.histogram();
    if let Some(missing) = present
        .iter()
        .enumerate()
        .find(|&(k, &n)| n > 0 && k >= params.len())
        .map(|(k, _)| k)
    {
        return Err(Error::MissingClassParams(missing as u16));
    }
    if params.stds.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("GMM standard deviations must be >= 0".into()));
    }
    let data = parc
        .data()
        .iter()
        .map(|&l| {
            let z: f64 = StandardNormal.sample(rng);
            (params.means[l as usize] + params.stds[l as usize] * z) as f32
        })
        .collect();
    Volume::new(parc.geom().clone(), data)
}

/// Smooth log-domain field on a coarse control grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasField {
    pub grid: [usize; 3],
    /// Control-node coefficients, x-fastest over `grid`.
    pub coefficients: Vec<f64>,
}

impl BiasField {
    pub fn sample(grid: [usize; 3], bias_std: f64, rng: &mut impl Rng) -> Self {
        let grid = grid.map(|g| g.max(1));
        let n = grid[0] * grid[1] * grid[2];
        let coefficients = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * bias_std
            })
            .collect();
        Self { grid, coefficients }
    }

    /// Log-field at full resolution.
    pub fn log_field(&self, dims: [usize; 3]) -> Vec<f64> {
        let nodes: Vec<[f64; 1]> = self.coefficients.iter().map(|&c| [c]).collect();
        upsample_control_grid(self.grid, &nodes, dims).into_iter().map(|v| v[0]).collect()
    }

    pub fn apply(&self, img: &ScalarVolume) -> ScalarVolume {
        let field = self.log_field(img.dims());
        let data = img
            .data()
            .iter()
            .zip(field)
            .map(|(&v, f)| (v as f64 * f.exp()) as f32)
            .collect();
        Volume::new(img.geom().clone(), data).expect("same grid")
    }
}

/// Multiply by `exp` of a trilinearly upsampled Gaussian control grid.
pub fn apply_bias_field(img: &ScalarVolume, bias_std: f64, grid: [usize; 3], rng: &mut impl Rng) -> ScalarVolume {
    if bias_std <= 0.0 {
        return img.clone();
    }
    BiasField::sample(grid, bias_std, rng).apply(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionEvent {
    pub axis: usize,
    pub spacing_mm: f64,
    pub thickness_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    pub aniso_prob: f64,
    pub aniso_max_spacing_mm: f64,
}

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 * sqrt(2 ln 2)

/// With probability `aniso_prob`, simulate a thick-slice acquisition along a
/// random axis and bring the result back to the original grid.
pub fn randomize_resolution(
    img: &ScalarVolume,
    cfg: &ResolutionConfig,
    rng: &mut impl Rng,
) -> (ScalarVolume, Option<ResolutionEvent>) {
    if !(rng.gen::<f64>() < cfg.aniso_prob) {
        return (img.clone(), None);
    }
    let axis = rng.gen_range(0..3usize);
    let native = img.geom().spacing()[axis];
    let spacing_mm = uniform(rng, [native, cfg.aniso_max_spacing_mm.max(native)]);
    let thickness_mm = uniform(rng, [native, spacing_mm]);
    let event = ResolutionEvent {
        axis,
        spacing_mm,
        thickness_mm,
    };
    (simulate_acquisition(img, &event), Some(event))
}

/// Deterministic part of [`randomize_resolution`]: blur with a Gaussian of
/// FWHM = thickness, sample every `spacing`, linearly interpolate back.
pub fn simulate_acquisition(img: &ScalarVolume, ev: &ResolutionEvent) -> ScalarVolume {
    let dims = img.dims();
    let n = dims[ev.axis];
    let native = img.geom().spacing()[ev.axis];
    let sigma = ev.thickness_mm / FWHM_TO_SIGMA / native;
    let kernel = gaussian_kernel(sigma);
    let step = ev.spacing_mm / native;
    let n_sub = ((n as f64 / step) - 1e-9).ceil().max(1.0) as usize;

    let stride = match ev.axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    let mut line = vec![0.0f64; n];
    let mut blurred = vec![0.0f64; n];
    let mut sub = vec![0.0f64; n_sub];
    for start in line_starts(dims, ev.axis) {
        for (i, v) in line.iter_mut().enumerate() {
            *v = src[start + i * stride] as f64;
        }
        convolve_clamped(&line, &kernel, &mut blurred);
        for (j, s) in sub.iter_mut().enumerate() {
            *s = lerp_clamped(&blurred, j as f64 * step);
        }
        for i in 0..n {
            out[start + i * stride] = lerp_clamped(&sub, i as f64 / step) as f32;
        }
    }
    Volume::new(img.geom().clone(), out).expect("same grid")
}

fn line_starts(dims: [usize; 3], axis: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let c = [x, y, z];
                if c[axis] == 0 {
                    starts.push(x + dims[0] * (y + dims[1] * z));
                }
            }
        }
    }
    starts
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn convolve_clamped(line: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = line.len() as i64;
    let r = (kernel.len() / 2) as i64;
    for (i, o) in out.iter_mut().enumerate() {
        *o = kernel
            .iter()
            .enumerate()
            .map(|(k, w)| w * line[(i as i64 + k as i64 - r).clamp(0, n - 1) as usize])
            .sum();
    }
}

fn lerp_clamped(line: &[f64], p: f64) -> f64 {
    let n = line.len();
    if p <= 0.0 {
        return line[0];
    }
    let i0 = p.floor() as usize;
    if i0 + 1 >= n {
        return line[n - 1];
    }
    let t = p - i0 as f64;
    line[i0] * (1.0 - t) + line[i0 + 1] * t
}

/// `min(value, max)` voxelwise.
pub fn clip_intensity(img: &ScalarVolume, max: f32) -> ScalarVolume {
    img.map(|&v| v.min(max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::volume::{default_class_names, Geometry};

    fn two_class(dims: [usize; 3]) -> LabelVolume {
        let g = Geometry::isotropic(dims);
        let data = (0..g.n_voxels()).map(|i| (i % 2) as u16).collect();
        LabelVolume::new(g, data, default_class_names(2)).unwrap()
    }

    #[test]
    fn zero_sigma_gives_exact_means() {
        let parc = two_class([4, 4, 4]);
        let params = GmmParams {
            means: vec![12.5, 200.25],
            stds: vec![0.0, 0.0],
        };
        let img = sample_gmm_image(&parc, &params, &mut RngStream::new(0).rng()).unwrap();
        for (v, l) in img.data().iter().zip(parc.data()) {
            assert_eq!(*v, params.means[*l as usize] as f32);
        }
    }

    #[test]
    fn missing_params_is_an_error() {
        let parc = two_class([2, 2, 2]);
        let params = GmmParams {
            means: vec![1.0],
            stds: vec![1.0],
        };
        assert!(matches!(
            sample_gmm_image(&parc, &params, &mut RngStream::new(0).rng()),
            Err(Error::MissingClassParams(1))
        ));
    }

    #[test]
    fn zero_bias_is_identity() {
        let g = Geometry::isotropic([5, 5, 5]);
        let img = Volume::from_fn(g, |[x, y, z]| (x * y + z) as f32 - 3.0);
        assert_eq!(apply_bias_field(&img, 0.0, [4, 4, 4], &mut RngStream::new(0).rng()), img);
    }

    #[test]
    fn bias_preserves_sign() {
        let g = Geometry::isotropic([7, 6, 5]);
        let img = Volume::from_fn(g, |[x, y, z]| (x as f32 - 3.0) * (y as f32 + 1.0) - z as f32);
        let out = apply_bias_field(&img, 0.5, [4, 4, 4], &mut RngStream::new(9).rng());
        for (a, b) in img.data().iter().zip(out.data()) {
            assert_eq!((*a > 0.0, *a < 0.0), (*b > 0.0, *b < 0.0));
        }
    }

    #[test]
    fn no_anisotropy_when_probability_zero() {
        let g = Geometry::isotropic([6, 6, 6]);
        let img = Volume::from_fn(g, |[x, _, _]| x as f32);
        let cfg = ResolutionConfig {
            aniso_prob: 0.0,
            aniso_max_spacing_mm: 5.0,
        };
        let (out, ev) = randomize_resolution(&img, &cfg, &mut RngStream::new(0).rng());
        assert!(ev.is_none());
        assert_eq!(out, img);
    }

    #[test]
    fn acquisition_keeps_dims_and_constants() {
        let g = Geometry::isotropic([10, 4, 3]);
        let img = Volume::filled(g, 7.0f32);
        for axis in 0..3 {
            let ev = ResolutionEvent {
                axis,
                spacing_mm: 3.3,
                thickness_mm: 2.0,
            };
            let out = simulate_acquisition(&img, &ev);
            assert_eq!(out.dims(), img.dims());
            assert!(out.data().iter().all(|v| (v - 7.0).abs() < 1e-5));
        }
    }

    #[test]
    fn clip_caps_and_keeps_negatives() {
        let g = Geometry::isotropic([4, 1, 1]);
        let img = Volume::new(g, vec![-50.0, 10.0, 1e9, 300.0]).unwrap();
        assert_eq!(clip_intensity(&img, 300.0).data(), &[-50.0, 10.0, 300.0, 300.0]);
    }
}
