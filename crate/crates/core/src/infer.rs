//! Inference plumbing around an abstract two-channel predictor:
//! preprocessing, prior packing, sliding-window prediction with Gaussian
//! blending, mirror test-time augmentation, modality fusion and
//! longitudinal propagation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{
    reorient_ras, resample, resample_to, zscore_normalize, Interpolation, LesionMask, ScalarVolume, Volume,
};

pub const DEFAULT_PATCH: [usize; 3] = [128, 128, 96];
pub const DEFAULT_STEP_FRACTION: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// One window of the two input channels, x-fastest over `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub shape: [usize; 3],
    pub image: Vec<f32>,
    pub prior: Vec<f32>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse the axes marked in `axes`.
    pub fn flipped(&self, axes: [bool; 3]) -> Patch {
        Patch {
            shape: self.shape,
            image: flip(&self.image, self.shape, axes),
            prior: flip(&self.prior, self.shape, axes),
        }
    }
}

/// `data` (x-fastest over `shape`) with the marked axes reversed.
pub fn flip(data: &[f32], shape: [usize; 3], axes: [bool; 3]) -> Vec<f32> {
    let [nx, ny, nz] = shape;
    let mut out = vec![0.0; data.len()];
    for z in 0..nz {
        let sz = if axes[2] { nz - 1 - z } else { z };
        for y in 0..ny {
            let sy = if axes[1] { ny - 1 - y } else { y };
            for x in 0..nx {
                let sx = if axes[0] { nx - 1 - x } else { x };
                out[x + nx * (y + ny * z)] = data[sx + nx * (sy + ny * sz)];
            }
        }
    }
    out
}

/// A segmentation model: maps a two-channel patch of `patch_shape()` to a
/// per-voxel lesion probability of the same shape.
pub trait Predictor: Send + Sync {
    fn patch_shape(&self) -> [usize; 3];
    fn predict(&self, patch: &Patch) -> Vec<f32>;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn patch_shape(&self) -> [usize; 3] {
        (**self).patch_shape()
    }
    fn predict(&self, patch: &Patch) -> Vec<f32> {
        (**self).predict(patch)
    }
}

/// Always `value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor {
    pub value: f32,
    pub patch: [usize; 3],
}

impl Predictor for ConstantPredictor {
    fn patch_shape(&self) -> [usize; 3] {
        self.patch
    }
    fn predict(&self, patch: &Patch) -> Vec<f32> {
        vec![self.value; patch.len()]
    }
}

/// Returns the prior channel unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopyPriorPredictor {
    pub patch: [usize; 3],
}

impl Predictor for CopyPriorPredictor {
    fn patch_shape(&self) -> [usize; 3] {
        self.patch
    }
    fn predict(&self, patch: &Patch) -> Vec<f32> {
        patch.prior.clone()
    }
}

/// 1 where the image channel is at least `threshold`, else 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPredictor {
    pub threshold: f32,
    pub patch: [usize; 3],
}

impl Predictor for ThresholdPredictor {
    fn patch_shape(&self) -> [usize; 3] {
        self.patch
    }
    fn predict(&self, patch: &Patch) -> Vec<f32> {
        patch.image.iter().map(|&v| if v >= self.threshold { 1.0 } else { 0.0 }).collect()
    }
}

/// Reference predictor by name: `constant:<c>`, `copy-prior` or
/// `threshold:<t>`.
pub fn predictor_from_name(name: &str, patch: [usize; 3]) -> Result<Box<dyn Predictor>> {
    let bad = || Error::InvalidArgument(format!("unknown predictor '{name}'; expected constant:<c>, copy-prior or threshold:<t>"));
    let number = |s: &str| s.parse::<f32>().map_err(|_| bad());
    if name == "copy-prior" {
        return Ok(Box::new(CopyPriorPredictor { patch }));
    }
    match name.split_once(':') {
        Some(("constant", v)) => {
            let value = number(v)?;
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidArgument(format!("constant predictor value {value} outside [0, 1]")));
            }
            Ok(Box::new(ConstantPredictor { value, patch }))
        }
        Some(("threshold", v)) => Ok(Box::new(ThresholdPredictor {
            threshold: number(v)?,
            patch,
        })),
        _ => Err(bad()),
    }
}

/// Averages the wrapped predictor over all eight combinations of axis
/// flips.
pub struct MirrorTta<P> {
    pub inner: P,
}

impl<P: Predictor> MirrorTta<P> {
    pub fn new(inner: P) -> Self {
        Self { inner }
    }
}

impl<P: Predictor> Predictor for MirrorTta<P> {
    fn patch_shape(&self) -> [usize; 3] {
        self.inner.patch_shape()
    }

    fn predict(&self, patch: &Patch) -> Vec<f32> {
        let mut acc = vec![0.0f64; patch.len()];
        for mask in 0..8u8 {
            let axes = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
            let out = self.inner.predict(&patch.flipped(axes));
            let out = if out.len() == patch.len() { flip(&out, patch.shape, axes) } else { return out };
            for (a, v) in acc.iter_mut().zip(out) {
                *a += v as f64;
            }
        }
        acc.into_iter().map(|v| (v / 8.0) as f32).collect()
    }
}

/// Image and prior mask on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoChannelInput {
    pub image: ScalarVolume,
    pub prior: LesionMask,
}

impl TwoChannelInput {
    pub fn new(image: ScalarVolume, prior: LesionMask) -> Result<Self> {
        image.geom().ensure_same(prior.geom(), "two-channel input")?;
        Ok(Self { image, prior })
    }
}

/// Reorient to RAS, z-score normalize, resample to 1 mm with tricubic
/// interpolation.
pub fn preprocess(img: &ScalarVolume) -> Result<ScalarVolume> {
    let ras = reorient_ras(img);
    let normalized = zscore_normalize(&ras)?;
    resample(&normalized, [1.0, 1.0, 1.0], Interpolation::Tricubic)
}

/// Pair an image with its prior, nearest-resampled onto the image grid; no
/// prior gives an empty mask.
pub fn pack_input(image: &ScalarVolume, prior: Option<&LesionMask>) -> Result<TwoChannelInput> {
    let prior = match prior {
        None => LesionMask::empty(image.geom().clone()),
        Some(p) if p.geom().approx_eq(image.geom(), 1e-4) => p.clone().with_geometry(image.geom().clone())?,
        Some(p) => resample_to(p, image.geom(), Interpolation::Nearest)?,
    };
    TwoChannelInput::new(image.clone(), prior)
}

/// Window start offsets along one axis of length `len >= patch`.
pub fn window_starts(len: usize, patch: usize, step_fraction: f64) -> Vec<usize> {
    let stride = ((step_fraction * patch as f64).floor() as usize).max(1);
    let last = len - patch;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    starts
}

/// Separable Gaussian importance map, σ = patch/8 per axis, centred.
pub fn gaussian_weights(patch: [usize; 3]) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        let sigma = n as f64 / 8.0;
        (0..n).map(|i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp()).collect()
    };
    let (wx, wy, wz) = (axis(patch[0]), axis(patch[1]), axis(patch[2]));
    let mut w = Vec::with_capacity(patch.iter().product());
    for z in &wz {
        for y in &wy {
            for x in &wx {
                w.push(x * y * z);
            }
        }
    }
    w
}

/// Tile the volume with overlapping windows, predict each, and blend the
/// outputs with a Gaussian weight map. Volumes smaller than the patch are
/// zero-padded symmetrically and cropped back.
pub fn sliding_window_predict<P: Predictor + ?Sized>(
    input: &TwoChannelInput,
    pred: &P,
    step_fraction: f64,
) -> Result<ScalarVolume> {
    if !(step_fraction > 0.0 && step_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("step fraction {step_fraction} outside (0, 1]")));
    }
    let patch = pred.patch_shape();
    if patch.contains(&0) {
        return Err(Error::InvalidArgument("patch shape must be positive".into()));
    }
    let dims = input.image.dims();
    let padded = [0, 1, 2].map(|a| dims[a].max(patch[a]));
    let offset = [0, 1, 2].map(|a| (padded[a] - dims[a]) / 2);
    let n_padded: usize = padded.iter().product();
    let mut image = vec![0.0f32; n_padded];
    let mut prior = vec![0.0f32; n_padded];
    let pidx = |x: usize, y: usize, z: usize| x + padded[0] * (y + padded[1] * z);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let src = input.image.geom().index(x, y, z);
                let dst = pidx(x + offset[0], y + offset[1], z + offset[2]);
                image[dst] = input.image.data()[src];
                prior[dst] = if input.prior.data()[src] { 1.0 } else { 0.0 };
            }
        }
    }

    let starts = [0, 1, 2].map(|a| window_starts(padded[a], patch[a], step_fraction));
    let mut windows = Vec::new();
    for &z in &starts[2] {
        for &y in &starts[1] {
            for &x in &starts[0] {
                windows.push([x, y, z]);
            }
        }
    }
    let weights = gaussian_weights(patch);
    let patch_len: usize = patch.iter().product();
    let extract = |src: &[f32], o: [usize; 3]| -> Vec<f32> {
        let mut out = Vec::with_capacity(patch_len);
        for z in 0..patch[2] {
            for y in 0..patch[1] {
                let start = pidx(o[0], o[1] + y, o[2] + z);
                out.extend_from_slice(&src[start..start + patch[0]]);
            }
        }
        out
    };

    let mut acc = vec![0.0f64; n_padded];
    let mut wsum = vec![0.0f64; n_padded];
    let batch = rayon::current_num_threads().max(1);
    for chunk in windows.chunks(batch) {
        let outputs: Vec<Result<Vec<f32>>> = chunk
            .par_iter()
            .map(|&o| {
                let p = Patch {
                    shape: patch,
                    image: extract(&image, o),
                    prior: extract(&prior, o),
                };
                let out = pred.predict(&p);
                if out.len() != patch_len {
                    return Err(Error::PredictorShape {
                        expected: patch_len,
                        got: out.len(),
                    });
                }
                Ok(out)
            })
            .collect();
        for (&o, out) in chunk.iter().zip(outputs) {
            let out = out?;
            let mut k = 0;
            for z in 0..patch[2] {
                for y in 0..patch[1] {
                    let start = pidx(o[0], o[1] + y, o[2] + z);
                    for x in 0..patch[0] {
                        let w = weights[k];
                        acc[start + x] += w * out[k] as f64;
                        wsum[start + x] += w;
                        k += 1;
                    }
                }
            }
        }
    }

    let out = Volume::from_fn(input.image.geom().clone(), |[x, y, z]| {
        let i = pidx(x + offset[0], y + offset[1], z + offset[2]);
        (acc[i] / wsum[i]) as f32
    });
    Ok(out)
}

/// Weighted mean of per-modality probability maps; `None` means equal
/// weights. Accumulates and returns double precision.
pub fn fuse_modalities<T>(probs: &[Volume<T>], weights: Option<&[f64]>) -> Result<Volume<f64>>
where
    T: Copy + Into<f64> + Send + Sync,
{
    let first = probs.first().ok_or_else(|| Error::InvalidArgument("no probability maps to fuse".into()))?;
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() != probs.len() => {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} probability maps",
                w.len(),
                probs.len()
            )))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; probs.len()],
    };
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("fusion weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("fusion weights are all zero".into()));
    }
    for p in &probs[1..] {
        first.geom().ensure_same(p.geom(), "fuse_modalities")?;
    }
    let data = (0..first.data().len())
        .into_par_iter()
        .map(|i| {
            let s: f64 = probs.iter().zip(&weights).map(|(p, w)| w * p.data()[i].into()).sum();
            s / total
        })
        .collect();
    Volume::new(first.geom().clone(), data)
}

/// Foreground where `prob >= threshold`.
pub fn binarize<T: Copy + Into<f64>>(prob: &Volume<T>, threshold: f32) -> LesionMask {
    let t = threshold as f64;
    prob.map(|&p| p.into() >= t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub step_fraction: f64,
    pub threshold: f32,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            step_fraction: DEFAULT_STEP_FRACTION,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Segment a single timepoint: preprocess, pack with `prior`, predict,
/// binarize. The mask lives on the preprocessed grid.
pub fn segment<P: Predictor + ?Sized>(
    scan: &ScalarVolume,
    prior: Option<&LesionMask>,
    pred: &P,
    cfg: &InferConfig,
) -> Result<LesionMask> {
    let image = preprocess(scan)?;
    let input = pack_input(&image, prior)?;
    let prob = sliding_window_predict(&input, pred, cfg.step_fraction)?;
    Ok(binarize(&prob, cfg.threshold))
}

/// Segment a series of co-registered scans in order: the first with an
/// empty prior, each later one with the previous prediction as prior.
pub fn propagate_longitudinal<P: Predictor + ?Sized>(
    scans: &[ScalarVolume],
    pred: &P,
    cfg: &InferConfig,
) -> Result<Vec<LesionMask>> {
    if scans.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut masks: Vec<LesionMask> = Vec::with_capacity(scans.len());
    for scan in scans {
        let mask = segment(scan, masks.last(), pred, cfg)?;
        masks.push(mask);
    }
    Ok(masks)
}
