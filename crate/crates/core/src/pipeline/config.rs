use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flm::FlmConfig;
use crate::synthgen::GmmSynthConfig;

/// An FLM configuration given either by preset name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlmSource {
    Preset(String),
    Custom(FlmConfig),
}

impl FlmSource {
    pub fn resolve(&self) -> Result<FlmConfig> {
        let cfg = match self {
            FlmSource::Preset(name) => FlmConfig::preset(name)?,
            FlmSource::Custom(cfg) => cfg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub lesions: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Where one input (parcellation, lesion mask) pair comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Files { labels: PathBuf, lesions: PathBuf },
    Phantom { phantom: PhantomSpec },
}

fn default_m() -> usize {
    15
}
fn default_p() -> usize {
    25
}
fn default_l() -> usize {
    5
}
fn default_aggressive() -> FlmSource {
    FlmSource::Preset("aggressive".into())
}
fn default_realistic() -> FlmSource {
    FlmSource::Preset("realistic".into())
}
fn default_empty_prior_fraction() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Input pairs, used by the command-line front end; library callers pass
    /// volumes directly.
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    /// Aggressive-FLM replicas per input.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Accepted scans per augmented mask.
    #[serde(default = "default_p")]
    pub p: usize,
    /// Realistic-FLM priors per scan.
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default = "default_aggressive")]
    pub aggressive: FlmSource,
    #[serde(default = "default_realistic")]
    pub realistic: FlmSource,
    #[serde(default)]
    pub synth: GmmSynthConfig,
    /// Classes lesions may never occupy (e.g. CSF).
    #[serde(default)]
    pub forbidden_classes: Vec<u16>,
    pub lesion_class: u16,
    pub wm_class: u16,
    #[serde(default = "default_empty_prior_fraction")]
    pub empty_prior_fraction: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: PathBuf,
    /// Draw a fresh spatial warp for every scan rather than one per
    /// augmented mask.
    #[serde(default = "default_true")]
    pub independent_warps: bool,
}

impl PipelineConfig {
    pub fn new(lesion_class: u16, wm_class: u16) -> Self {
        Self {
            inputs: Vec::new(),
            m: default_m(),
            p: default_p(),
            l: default_l(),
            aggressive: default_aggressive(),
            realistic: default_realistic(),
            synth: GmmSynthConfig::default(),
            forbidden_classes: Vec::new(),
            lesion_class,
            wm_class,
            empty_prior_fraction: default_empty_prior_fraction(),
            master_seed: 0,
            output_dir: PathBuf::new(),
            independent_warps: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m", self.m), ("p", self.p), ("l", self.l)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name}: must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.empty_prior_fraction) {
            return Err(Error::InvalidConfig(format!(
                "empty_prior_fraction: {} outside [0, 1]",
                self.empty_prior_fraction
            )));
        }
        if self.lesion_class == self.wm_class {
            return Err(Error::InvalidConfig("lesion_class and wm_class must differ".into()));
        }
        for c in [self.lesion_class, self.wm_class] {
            if self.forbidden_classes.contains(&c) {
                return Err(Error::InvalidConfig(format!(
                    "forbidden_classes: class {c} is the lesion or white-matter class"
                )));
            }
        }
        self.aggressive.resolve()?;
        self.realistic.resolve()?;
        self.synth.validate()
    }

    pub fn triplets_per_input(&self) -> usize {
        self.m * self.p * self.l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_gets_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"lesion_class": 5, "wm_class": 3}"#).unwrap();
        assert_eq!((c.m, c.p, c.l), (15, 25, 5));
        assert_eq!(c.empty_prior_fraction, 0.2);
        assert_eq!(c.aggressive.resolve().unwrap(), FlmConfig::aggressive());
        c.validate().unwrap();
    }

    #[test]
    fn zero_counts_name_the_field() {
        let mut c = PipelineConfig::new(5, 3);
        c.m = 0;
        assert!(c.validate().unwrap_err().to_string().contains("m: must be"));
    }

    #[test]
    fn custom_flm_inline() {
        let json = serde_json::json!({
            "lesion_class": 5, "wm_class": 3,
            "realistic": FlmConfig::identity(),
        });
        let c: PipelineConfig = serde_json::from_value(json).unwrap();
        assert_eq!(c.realistic.resolve().unwrap().name, "identity");
    }

    #[test]
    fn input_specs_parse() {
        let json = r#"{"lesion_class": 5, "wm_class": 3, "inputs": [
            {"labels": "a.nii.gz", "lesions": "b.nii.gz"},
            {"phantom": {"dims": [16, 16, 16], "lesions": 3}}
        ]}"#;
        let c: PipelineConfig = serde_json::from_str(json).unwrap();
        assert!(matches!(c.inputs[0], InputSpec::Files { .. }));
        assert!(matches!(&c.inputs[1], InputSpec::Phantom { phantom } if phantom.seed == 0));
    }

    #[test]
    fn unknown_preset_rejected() {
        let mut c = PipelineConfig::new(5, 3);
        c.aggressive = FlmSource::Preset("nope".into());
        assert!(c.validate().is_err());
    }
}
