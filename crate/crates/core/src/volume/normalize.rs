use super::ScalarVolume;
use crate::error::{Error, Result};

/// Z-score with statistics over the non-zero voxels (all voxels when the
/// image has none), population standard deviation. Every voxel, background
/// included, goes through the same `(v - mean) / sd` map.
pub fn zscore_normalize(img: &ScalarVolume) -> Result<ScalarVolume> {
    let data = img.data();
    let nonzero = data.iter().any(|&v| v != 0.0);
    let support = data.iter().filter(|&&v| !nonzero || v != 0.0);
    let (mut n, mut sum) = (0usize, 0.0f64);
    for &v in support.clone() {
        n += 1;
        sum += v as f64;
    }
    let mean = sum / n as f64;
    let var = support.map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() || sd <= 1e-12 * mean.abs() {
        return Err(Error::DegenerateIntensity);
    }
    Ok(img.map(|&v| ((v as f64 - mean) / sd) as f32))
}
