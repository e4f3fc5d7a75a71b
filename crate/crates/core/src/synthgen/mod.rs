//! Domain-randomized synthetic scan generation from a label map.
//!
//! A scan is produced by warping the labels once, then (possibly several
//! times, until the EF acceptance test passes) sampling GMM intensities,
//! corrupting them with a bias field and a random acquisition resolution,
//! and clipping.

pub mod acceptance;
pub mod intensity;
pub mod spatial;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use acceptance::{accept_scan, effect_size, nearest_rank, AcceptanceReport, PairEffect};
pub use intensity::{
    apply_bias_field, clip_intensity, randomize_resolution, sample_gmm_image, BiasField, GmmParams, ResolutionConfig,
    ResolutionEvent,
};
pub use spatial::{
    integrate_velocity, sample_affine, sample_svf_deformation, warp_labels, AffineParams, DeformationField,
    SpatialAugmentConfig,
};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::volume::{LabelVolume, Mat4, ScalarVolume};

/// Closed interval `[lo, hi]` for uniform draws.
pub type Range = [f64; 2];

/// Uniform draw from `range`; always consumes exactly one value from `rng`.
pub fn uniform(rng: &mut impl Rng, range: Range) -> f64 {
    let u: f64 = rng.gen();
    range[0] + (range[1] - range[0]) * u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSynthConfig {
    pub spatial: SpatialAugmentConfig,
    pub mu_range: Range,
    pub sigma_range: Range,
    /// Std of the log bias coefficients, drawn per scan.
    pub bias_std_range: Range,
    pub bias_grid: [usize; 3],
    pub aniso_prob: f64,
    pub aniso_max_spacing_mm: f64,
    pub clip_max: f64,
    pub ef_percentile: f64,
    pub max_retries: usize,
}

impl Default for GmmSynthConfig {
    fn default() -> Self {
        Self {
            spatial: SpatialAugmentConfig::default(),
            mu_range: [0.0, 250.0],
            sigma_range: [0.0, 30.0],
            bias_std_range: [0.0, 0.3],
            bias_grid: [4, 4, 4],
            aniso_prob: 0.9,
            aniso_max_spacing_mm: 5.0,
            clip_max: 300.0,
            ef_percentile: 80.0,
            max_retries: 1000,
        }
    }
}

impl GmmSynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let ranges = [
            ("spatial.rotation_deg", self.spatial.rotation_deg),
            ("spatial.scale", self.spatial.scale),
            ("spatial.shear", self.spatial.shear),
            ("spatial.svf_std", self.spatial.svf_std),
            ("mu_range", self.mu_range),
            ("sigma_range", self.sigma_range),
            ("bias_std_range", self.bias_std_range),
        ];
        for (name, r) in ranges {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return bad(format!("{name}: range {r:?} must satisfy lo <= hi"));
            }
        }
        for (name, r) in [
            ("sigma_range", self.sigma_range),
            ("bias_std_range", self.bias_std_range),
            ("spatial.svf_std", self.spatial.svf_std),
        ] {
            if r[0] < 0.0 {
                return bad(format!("{name}: must be non-negative"));
            }
        }
        if !(self.spatial.scale[0] > 0.0) {
            return bad("spatial.scale: must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.aniso_prob) {
            return bad(format!("aniso_prob: {} outside [0, 1]", self.aniso_prob));
        }
        if !(self.aniso_max_spacing_mm > 0.0) {
            return bad("aniso_max_spacing_mm: must be positive".into());
        }
        if !(self.clip_max > 0.0) {
            return bad("clip_max: must be positive".into());
        }
        if !(self.ef_percentile > 0.0 && self.ef_percentile < 100.0) {
            return bad(format!("ef_percentile: {} outside (0, 100)", self.ef_percentile));
        }
        if self.max_retries == 0 {
            return bad("max_retries: must be at least 1".into());
        }
        if self.bias_grid.contains(&0) {
            return bad("bias_grid: must be positive".into());
        }
        if self.spatial.svf_steps > 30 {
            return bad("spatial.svf_steps: at most 30".into());
        }
        Ok(())
    }

    pub fn resolution(&self) -> ResolutionConfig {
        ResolutionConfig {
            aniso_prob: self.aniso_prob,
            aniso_max_spacing_mm: self.aniso_max_spacing_mm,
        }
    }
}

/// What a spatial warp draw produced.
#[derive(Debug, Clone)]
pub struct Warp {
    pub params: AffineParams,
    pub matrix: Mat4,
    pub svf_std: f64,
    pub field: DeformationField,
}

impl Warp {
    pub fn apply(&self, labels: &LabelVolume) -> Result<LabelVolume> {
        warp_labels(labels, &self.matrix, &self.field)
    }
}

/// Draw a random affine from `stream.child(0)` and an SVF displacement from
/// `stream.child(1)`.
pub fn sample_warp(labels: &LabelVolume, cfg: &SpatialAugmentConfig, stream: &RngStream) -> Warp {
    let geom = labels.geom();
    let mut rng = stream.child(0).rng();
    let params = AffineParams::sample(cfg, &mut rng);
    let matrix = params.matrix_about(spatial::grid_center(geom));
    let mut rng = stream.child(1).rng();
    let svf_std = uniform(&mut rng, cfg.svf_std);
    let field = sample_svf_deformation(geom, svf_std, cfg, &mut rng);
    Warp {
        params,
        matrix,
        svf_std,
        field,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanDraw {
    pub params: GmmParams,
    pub bias_std: f64,
    pub resolution: Option<ResolutionEvent>,
}

/// One unconditioned scan: GMM → bias → resolution → clip, each stage on
/// its own sub-stream.
pub fn synthesize_scan(labels: &LabelVolume, cfg: &GmmSynthConfig, stream: &RngStream) -> Result<(ScalarVolume, ScanDraw)> {
    let mut rng = stream.child(0).rng();
    let params = GmmParams::sample(labels.k(), cfg.mu_range, cfg.sigma_range, &mut rng);
    let img = sample_gmm_image(labels, &params, &mut stream.child(1).rng())?;
    let mut rng = stream.child(2).rng();
    let bias_std = uniform(&mut rng, cfg.bias_std_range);
    let img = apply_bias_field(&img, bias_std, cfg.bias_grid, &mut rng);
    let (img, resolution) = randomize_resolution(&img, &cfg.resolution(), &mut stream.child(3).rng());
    let img = clip_intensity(&img, cfg.clip_max as f32);
    Ok((
        img,
        ScanDraw {
            params,
            bias_std,
            resolution,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct AcceptedScan {
    pub image: ScalarVolume,
    pub draw: ScanDraw,
    pub report: AcceptanceReport,
    /// Rejected attempts before this one.
    pub retries: usize,
}

/// Resample scans (attempt `r` uses `stream.child(r)`) until one passes the
/// EF test, at most `max_retries` attempts.
pub fn generate_accepted_scan(
    labels: &LabelVolume,
    lesion_class: u16,
    wm_class: u16,
    cfg: &GmmSynthConfig,
    stream: &RngStream,
) -> Result<AcceptedScan> {
    for attempt in 0..cfg.max_retries {
        let (image, draw) = synthesize_scan(labels, cfg, &stream.child(attempt as u64))?;
        let report = accept_scan(&image, labels, lesion_class, wm_class, cfg.ef_percentile)?;
        if report.accepted {
            return Ok(AcceptedScan {
                image,
                draw,
                report,
                retries: attempt,
            });
        }
    }
    Err(Error::AcceptanceExhausted {
        retries: cfg.max_retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        GmmSynthConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut c = GmmSynthConfig::default();
        c.aniso_prob = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("aniso_prob"));
        let mut c = GmmSynthConfig::default();
        c.mu_range = [10.0, 5.0];
        assert!(c.validate().unwrap_err().to_string().contains("mu_range"));
        let mut c = GmmSynthConfig::default();
        c.ef_percentile = 100.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = RngStream::new(5).rng();
        for _ in 0..1000 {
            let v = uniform(&mut rng, [-15.0, 15.0]);
            assert!((-15.0..=15.0).contains(&v));
        }
        assert_eq!(uniform(&mut rng, [2.0, 2.0]), 2.0);
    }

    #[test]
    fn json_defaults_fill_missing_fields() {
        let c: GmmSynthConfig = serde_json::from_str(r#"{"clip_max": 100.0}"#).unwrap();
        assert_eq!(c.clip_max, 100.0);
        assert_eq!(c.ef_percentile, 80.0);
        assert_eq!(c.spatial.rotation_deg, [-15.0, 15.0]);
    }
}
