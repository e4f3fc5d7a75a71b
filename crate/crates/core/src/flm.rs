//! Fake Lesion Mask (FLM): synthesize a plausible earlier-timepoint mask by
//! stochastically deforming every lesion of a follow-up mask.
//!
//! Operations run in reverse time, so growth between timepoints is realised
//! by eroding the follow-up lesion and shrinkage by dilating it; a lesion
//! that is new at follow-up is removed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{bounding_box, connected_components, dilate, erode, Connectivity};
use crate::rng::RngStream;
use crate::volume::{Geometry, LabelVolume, LesionMask, Volume};

pub const MAX_ITERATIONS: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LesionTransform {
    Stable,
    Erode(u8),
    Dilate(u8),
    Remove,
}

impl fmt::Display for LesionTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LesionTransform::Stable => write!(f, "stable"),
            LesionTransform::Erode(k) => write!(f, "erode{k}"),
            LesionTransform::Dilate(k) => write!(f, "dilate{k}"),
            LesionTransform::Remove => write!(f, "remove"),
        }
    }
}

impl FromStr for LesionTransform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown lesion transform {s:?}"));
        let iterations = |rest: &str| -> Result<u8> {
            let k: u8 = rest.parse().map_err(|_| bad())?;
            if (1..=MAX_ITERATIONS).contains(&k) {
                Ok(k)
            } else {
                Err(Error::InvalidConfig(format!(
                    "transform {s:?}: iterations must be in 1..={MAX_ITERATIONS}"
                )))
            }
        };
        match s {
            "stable" => Ok(LesionTransform::Stable),
            "remove" => Ok(LesionTransform::Remove),
            _ => {
                if let Some(rest) = s.strip_prefix("erode") {
                    Ok(LesionTransform::Erode(iterations(rest)?))
                } else if let Some(rest) = s.strip_prefix("dilate") {
                    Ok(LesionTransform::Dilate(iterations(rest)?))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl TryFrom<String> for LesionTransform {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LesionTransform> for String {
    fn from(t: LesionTransform) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTransform {
    pub transform: LesionTransform,
    pub p: f64,
}

/// Categorical transform distribution for lesions whose volume falls in
/// `[min_mm3, max_mm3)` (`]` when `max_inclusive`). `max_mm3 = None` is +∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeBand {
    pub min_mm3: f64,
    pub max_mm3: Option<f64>,
    #[serde(default)]
    pub max_inclusive: bool,
    pub dist: Vec<WeightedTransform>,
}

impl VolumeBand {
    fn new(min_mm3: f64, max_mm3: Option<f64>, dist: &[(LesionTransform, f64)]) -> Self {
        Self {
            min_mm3,
            max_mm3,
            max_inclusive: false,
            dist: dist
                .iter()
                .map(|&(transform, p)| WeightedTransform { transform, p })
                .collect(),
        }
    }

    pub fn contains(&self, volume_mm3: f64) -> bool {
        volume_mm3 >= self.min_mm3
            && match self.max_mm3 {
                None => true,
                Some(hi) if self.max_inclusive => volume_mm3 <= hi,
                Some(hi) => volume_mm3 < hi,
            }
    }

    /// Inverse CDF over `dist` in declared order, `u` in `[0, 1)`.
    pub fn pick(&self, u: f64) -> LesionTransform {
        let mut cum = 0.0;
        for w in &self.dist {
            cum += w.p;
            if u < cum {
                return w.transform;
            }
        }
        // u landed in the rounding slack above the last cumulative value
        self.dist
            .iter()
            .rev()
            .find(|w| w.p > 0.0)
            .map(|w| w.transform)
            .unwrap_or(LesionTransform::Stable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlmConfig {
    pub name: String,
    pub bands: Vec<VolumeBand>,
    #[serde(default)]
    pub connectivity: Connectivity,
}

pub const PRESET_NAMES: [&str; 2] = ["aggressive", "realistic"];

impl FlmConfig {
    /// Variability-oriented preset used to augment the input masks. The
    /// volume-independent 40% stability is already folded into each band.
    pub fn aggressive() -> Self {
        use LesionTransform::*;
        Self {
            name: "aggressive".into(),
            bands: vec![
                VolumeBand::new(0.0, Some(200.0), &[(Stable, 0.90), (Remove, 0.10)]),
                VolumeBand::new(
                    200.0,
                    Some(1000.0),
                    &[(Stable, 0.70), (Erode(1), 0.10), (Dilate(1), 0.10), (Remove, 0.10)],
                ),
                VolumeBand::new(
                    1000.0,
                    None,
                    &[(Stable, 0.55), (Erode(1), 0.15), (Dilate(1), 0.15), (Remove, 0.15)],
                ),
            ],
            connectivity: Connectivity::TwentySix,
        }
    }

    /// Preset used to derive prior timepoints from a follow-up mask. Small
    /// lesions cap erosion at two iterations; lesions above 2500 mm³ are
    /// always stable.
    pub fn realistic() -> Self {
        use LesionTransform::*;
        let mut mid = VolumeBand::new(
            250.0,
            Some(2500.0),
            &[
                (Stable, 0.30),
                (Erode(1), 0.35),
                (Erode(2), 0.08),
                (Erode(3), 0.02),
                (Remove, 0.24),
                (Dilate(1), 0.01),
            ],
        );
        mid.max_inclusive = true;
        Self {
            name: "realistic".into(),
            bands: vec![
                VolumeBand::new(
                    0.0,
                    Some(250.0),
                    &[(Stable, 0.30), (Erode(1), 0.35), (Erode(2), 0.10), (Remove, 0.24), (Dilate(1), 0.01)],
                ),
                mid,
                VolumeBand::new(2500.0, None, &[(Stable, 1.0)]),
            ],
            connectivity: Connectivity::TwentySix,
        }
    }

    /// Every lesion kept as is.
    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            bands: vec![VolumeBand::new(0.0, None, &[(LesionTransform::Stable, 1.0)])],
            connectivity: Connectivity::TwentySix,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "aggressive" => Ok(Self::aggressive()),
            "realistic" => Ok(Self::realistic()),
            other => Err(Error::InvalidConfig(format!(
                "unknown FLM preset {other:?}; valid presets: {}",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidConfig(format!("FLM config {:?}: {msg}", self.name)));
        if self.bands.is_empty() {
            return err("no volume bands".into());
        }
        if self.bands[0].min_mm3 != 0.0 {
            return err("first band must start at 0 mm³".into());
        }
        for (i, band) in self.bands.iter().enumerate() {
            let total: f64 = band.dist.iter().map(|w| w.p).sum();
            if band.dist.iter().any(|w| !(w.p >= 0.0) || !w.p.is_finite()) {
                return err(format!("band {i} has a negative or non-finite probability"));
            }
            if (total - 1.0).abs() > 1e-9 {
                return err(format!("band {i} probabilities sum to {total}, not 1"));
            }
            for w in &band.dist {
                if let LesionTransform::Erode(k) | LesionTransform::Dilate(k) = w.transform {
                    if !(1..=MAX_ITERATIONS).contains(&k) {
                        return err(format!("band {i}: iterations {k} outside 1..={MAX_ITERATIONS}"));
                    }
                }
            }
            match (band.max_mm3, self.bands.get(i + 1)) {
                (Some(hi), Some(next)) => {
                    if !(hi > band.min_mm3) {
                        return err(format!("band {i} is empty"));
                    }
                    if next.min_mm3 != hi {
                        return err(format!("gap or overlap between bands {i} and {}", i + 1));
                    }
                }
                (None, Some(_)) => return err(format!("band {i} is unbounded but not last")),
                (Some(_), None) => return err("last band must extend to infinity".into()),
                (None, None) => {}
            }
        }
        Ok(())
    }

    pub fn band_for(&self, volume_mm3: f64) -> &VolumeBand {
        self.bands
            .iter()
            .find(|b| b.contains(volume_mm3))
            .unwrap_or_else(|| self.bands.last().expect("validated config has bands"))
    }

    pub fn sample(&self, volume_mm3: f64, rng: &mut impl Rng) -> LesionTransform {
        self.band_for(volume_mm3).pick(rng.gen::<f64>())
    }
}

/// One draw from the band containing `volume_mm3`, taken from the start of
/// `stream`.
pub fn sample_transform(volume_mm3: f64, cfg: &FlmConfig, stream: &RngStream) -> LesionTransform {
    cfg.sample(volume_mm3, &mut stream.rng())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentOutcome {
    /// 1-based component id in the input mask.
    pub id: u32,
    pub volume_mm3: f64,
    pub transform: LesionTransform,
    /// Voxels contributed to the prior mask (0 when removed or eroded away).
    pub voxels_out: usize,
}

#[derive(Debug, Clone)]
pub struct PriorSimulation {
    pub mask: LesionMask,
    pub outcomes: Vec<ComponentOutcome>,
}

/// Deform every connected component independently and union the results.
///
/// Component `c` draws its transform from `stream.child(c)`, so one
/// lesion's draw never depends on the others.
pub fn simulate_prior(mask: &LesionMask, cfg: &FlmConfig, stream: &RngStream) -> LesionMask {
    simulate_prior_detailed(mask, cfg, stream).mask
}

pub fn simulate_prior_detailed(mask: &LesionMask, cfg: &FlmConfig, stream: &RngStream) -> PriorSimulation {
    let geom = mask.geom();
    let cm = connected_components(mask, cfg.connectivity);
    let members = cm.members();
    let results: Vec<(ComponentOutcome, Vec<usize>)> = members
        .par_iter()
        .enumerate()
        .map(|(c, voxels)| {
            let id = c as u32 + 1;
            let volume_mm3 = cm.volume_mm3(id);
            let transform = sample_transform(volume_mm3, cfg, &stream.child(id as u64));
            let out = apply_transform(geom, voxels, transform);
            (
                ComponentOutcome {
                    id,
                    volume_mm3,
                    transform,
                    voxels_out: out.len(),
                },
                out,
            )
        })
        .collect();
    let mut data = vec![false; geom.n_voxels()];
    let mut outcomes = Vec::with_capacity(results.len());
    for (outcome, voxels) in results {
        for i in voxels {
            data[i] = true;
        }
        outcomes.push(outcome);
    }
    PriorSimulation {
        mask: Volume::new(geom.clone(), data).expect("same grid"),
        outcomes,
    }
}

/// Apply one transform to a single component given by its linear indices,
/// working in a cropped sub-grid. Returns the resulting linear indices.
pub fn apply_transform(geom: &Geometry, voxels: &[usize], transform: LesionTransform) -> Vec<usize> {
    let k = match transform {
        LesionTransform::Stable => return voxels.to_vec(),
        LesionTransform::Remove => return Vec::new(),
        LesionTransform::Erode(k) | LesionTransform::Dilate(k) => k as usize,
    };
    let Some((lo, hi)) = bounding_box(geom, voxels, k + 1) else {
        return Vec::new();
    };
    let local_dims = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let local_geom = Geometry::isotropic(local_dims);
    let mut local = LesionMask::empty(local_geom.clone());
    for &i in voxels {
        let c = geom.coords(i);
        let li = local_geom.index(c[0] - lo[0], c[1] - lo[1], c[2] - lo[2]);
        local.data_mut()[li] = true;
    }
    // The crop extends past the component on every side that is not the grid
    // boundary, so crop edges behave exactly like the full grid here.
    let result = match transform {
        LesionTransform::Erode(_) => erode(&local, k),
        _ => dilate(&local, k),
    };
    result
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .map(|(li, _)| {
            let c = local_geom.coords(li);
            geom.index(c[0] + lo[0], c[1] + lo[1], c[2] + lo[2])
        })
        .collect()
}

/// Remove lesion voxels that fall on forbidden parcellation classes.
pub fn clamp_to_plausible(mask: &LesionMask, parc: &LabelVolume, forbidden: &[u16]) -> Result<LesionMask> {
    mask.geom().ensure_same(parc.geom(), "clamp_to_plausible")?;
    if forbidden.is_empty() {
        return Ok(mask.clone());
    }
    let mut deny = vec![false; parc.k().max(1 + *forbidden.iter().max().unwrap() as usize)];
    for &f in forbidden {
        deny[f as usize] = true;
    }
    let data = mask
        .data()
        .iter()
        .zip(parc.data())
        .map(|(&m, &l)| m && !deny[l as usize])
        .collect();
    Volume::new(mask.geom().clone(), data)
}

/// Paint `lesion_class` wherever the mask is set.
pub fn merge_lesions_into_parcellation(parc: &LabelVolume, mask: &LesionMask, lesion_class: u16) -> Result<LabelVolume> {
    parc.geom().ensure_same(mask.geom(), "merge_lesions_into_parcellation")?;
    if lesion_class as usize >= parc.k() {
        return Err(Error::InvalidArgument(format!(
            "lesion class {lesion_class} is not below K = {}",
            parc.k()
        )));
    }
    let data = parc
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&l, &m)| if m { lesion_class } else { l })
        .collect();
    LabelVolume::new(parc.geom().clone(), data, parc.class_names().to_vec())
}
