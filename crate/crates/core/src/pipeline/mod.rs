//! End-to-end dataset generation: N input (parcellation, lesion mask) pairs
//! become N·M·P·L training triplets (image, prior mask, ground truth).
//!
//! Every random draw is addressed by its position in the dataset, never by
//! the worker that happens to compute it, so output bytes do not depend on
//! the number of threads.

pub mod config;
pub mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{FlmSource, InputSpec, PhantomSpec, PipelineConfig};
pub use verify::{verify_manifest, CheckResult, VerifyReport};

use crate::error::{Error, JobId, Result};
use crate::flm::{clamp_to_plausible, merge_lesions_into_parcellation, simulate_prior, FlmConfig};
use crate::rng::{stage, RngStream};
use crate::synthgen::{generate_accepted_scan, sample_warp, AcceptanceReport, AffineParams, ScanDraw};
use crate::volume::{read_nifti, write_nifti, LabelVolume, LesionMask};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fewest lesion voxels a merged or warped parcellation may carry; the EF
/// test needs two voxels per class.
const MIN_LESION_VOXELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub accepted: bool,
    pub ef_lesion_wm: f64,
    pub threshold: f64,
    pub percentile: f64,
}

impl From<&AcceptanceReport> for AcceptanceSummary {
    fn from(r: &AcceptanceReport) -> Self {
        Self {
            accepted: r.accepted,
            ef_lesion_wm: r.ef_lesion_wm,
            threshold: r.threshold,
            percentile: r.percentile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub l: usize,
    /// Paths relative to the dataset root.
    pub image: String,
    pub prior: String,
    pub gt: String,
    pub labels: String,
    pub prior_is_empty: bool,
    /// The prior was replaced by an empty mask (as opposed to FLM removing
    /// every lesion).
    pub empty_substituted: bool,
    pub prior_voxels: usize,
    pub gt_voxels: usize,
    pub acceptance: AcceptanceSummary,
    pub retries: usize,
    pub prior_rng: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub dir: String,
    pub aggressive_rng: Vec<u64>,
    pub aggressive_attempts: usize,
    pub warp_rng: Vec<u64>,
    pub warp_attempts: usize,
    pub affine: AffineParams,
    pub svf_std: f64,
    pub gmm_rng: Vec<u64>,
    pub draw: ScanDraw,
    pub report: AcceptanceReport,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub index: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub k: usize,
    pub lesion_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    /// Seconds since the Unix epoch; the only field that differs between
    /// reruns.
    pub created: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<InputSummary>,
    /// Stage name → RNG path template.
    pub rng_layout: BTreeMap<String, String>,
    pub scans: Vec<ScanRecord>,
    pub records: Vec<TripletRecord>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn expected_records(&self) -> usize {
        self.inputs.len() * self.config.triplets_per_input()
    }
}

pub fn rng_layout() -> BTreeMap<String, String> {
    [
        ("aggressive_flm", format!("[n, {}, m, attempt, component]", stage::AGGRESSIVE_FLM)),
        ("warp", format!("[n, {}, m, p, attempt, 0=affine|1=svf]", stage::WARP)),
        ("gmm", format!("[n, {}, m, p, attempt, 0=params|1=noise|2=bias|3=resolution]", stage::GMM)),
        ("prior_flm", format!("[n, {}, m, p, l, component]", stage::PRIOR_FLM)),
        ("empty_prior", format!("[n, {}, m, p, l]", stage::EMPTY_PRIOR)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Read or build the input pairs listed in `cfg.inputs`, resolving relative
/// paths against `base`.
pub fn load_inputs(specs: &[InputSpec], base: &Path) -> Result<Vec<(LabelVolume, LesionMask)>> {
    specs
        .iter()
        .map(|spec| match spec {
            InputSpec::Files { labels, lesions } => {
                let parc = read_nifti(base.join(labels))?.into_labels()?;
                let mask = read_nifti(base.join(lesions))?.into_mask();
                Ok((parc, mask))
            }
            InputSpec::Phantom { phantom } => {
                let stream = RngStream::new(phantom.seed);
                Ok(crate::phantom::brain(phantom.dims, phantom.lesions, &stream))
            }
        })
        .collect()
}

/// Check an input pair and put it in canonical form: the lesion class is
/// guaranteed to exist in the class list and is cleared from the
/// parcellation (its voxels become white matter); lesions come only from
/// the mask.
pub fn prepare_input(
    n: usize,
    parc: &LabelVolume,
    mask: &LesionMask,
    cfg: &PipelineConfig,
) -> Result<(LabelVolume, LesionMask)> {
    parc.geom()
        .ensure_same(mask.geom(), "input pair")
        .map_err(|e| Error::GeometryMismatch(format!("input {n}: {e}")))?;
    let h = parc.histogram();
    if h.get(cfg.wm_class as usize).copied().unwrap_or(0) == 0 {
        return Err(Error::InvalidArgument(format!(
            "input {n}: white-matter class {} is absent from the parcellation",
            cfg.wm_class
        )));
    }
    let mut names = parc.class_names().to_vec();
    while names.len() <= cfg.lesion_class as usize {
        let i = names.len();
        names.push(if i == cfg.lesion_class as usize { "lesion".into() } else { format!("class_{i}") });
    }
    let data = parc
        .data()
        .iter()
        .map(|&l| if l == cfg.lesion_class { cfg.wm_class } else { l })
        .collect();
    let parc = LabelVolume::new(parc.geom().clone(), data, names)?;
    let mask = clamp_to_plausible(mask, &parc, &cfg.forbidden_classes)?;
    if mask.count() < MIN_LESION_VOXELS {
        return Err(Error::InvalidArgument(format!(
            "input {n}: lesion mask has {} voxel(s) outside forbidden classes, need at least {MIN_LESION_VOXELS}",
            mask.count()
        )));
    }
    Ok((parc, mask))
}

struct Resolved {
    aggressive: FlmConfig,
    realistic: FlmConfig,
}

/// Stage A for one `(n, m)`: aggressive FLM on the input mask, clamped and
/// merged into the parcellation. Redrawn (on `attempt` sub-streams) while
/// fewer than two lesion voxels survive.
fn augment_mask(
    parc: &LabelVolume,
    mask: &LesionMask,
    flm: &FlmConfig,
    cfg: &PipelineConfig,
    base: &RngStream,
) -> Result<(LabelVolume, usize)> {
    for attempt in 0..cfg.synth.max_retries {
        let prior = simulate_prior(mask, flm, &base.child(attempt as u64));
        let prior = clamp_to_plausible(&prior, parc, &cfg.forbidden_classes)?;
        if prior.count() >= MIN_LESION_VOXELS {
            return Ok((merge_lesions_into_parcellation(parc, &prior, cfg.lesion_class)?, attempt + 1));
        }
    }
    Err(Error::AcceptanceExhausted {
        retries: cfg.synth.max_retries,
    })
}

fn rel(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Stage B for one `(n, m, p)`: warp, accepted scan, L priors; writes all
/// volumes under the scan directory.
#[allow(clippy::too_many_arguments)]
fn scan_job(
    id: JobId,
    merged: &LabelVolume,
    aggressive_rng: &RngStream,
    aggressive_attempts: usize,
    resolved: &Resolved,
    cfg: &PipelineConfig,
    root: &RngStream,
    out: &Path,
) -> Result<(ScanRecord, Vec<TripletRecord>)> {
    let (n, m) = (id.n as u64, id.m as u64);
    let p = id.p.expect("scan jobs carry p") as u64;
    let warp_rng = if cfg.independent_warps {
        root.descend(&[n, stage::WARP, m, p])
    } else {
        root.descend(&[n, stage::WARP, m])
    };
    let mut warped = None;
    for attempt in 0..cfg.synth.max_retries {
        let warp = sample_warp(merged, &cfg.synth.spatial, &warp_rng.child(attempt as u64));
        let labels = warp.apply(merged)?;
        let h = labels.histogram();
        if h[cfg.lesion_class as usize] >= MIN_LESION_VOXELS && h[cfg.wm_class as usize] >= MIN_LESION_VOXELS {
            warped = Some((warp, labels, attempt + 1));
            break;
        }
    }
    let (warp, labels, warp_attempts) = warped.ok_or(Error::AcceptanceExhausted {
        retries: cfg.synth.max_retries,
    })?;

    let gmm_rng = root.descend(&[n, stage::GMM, m, p]);
    let scan = generate_accepted_scan(&labels, cfg.lesion_class, cfg.wm_class, &cfg.synth, &gmm_rng)?;
    let gt = labels.mask_of(cfg.lesion_class);

    let rel_dir = PathBuf::from(format!("sub-{:03}", id.n))
        .join(format!("aug-{:03}", id.m))
        .join(format!("scan-{p:03}"));
    let dir = out.join(&rel_dir);
    ensure_dir(&dir)?;
    let image_rel = rel(&rel_dir.join("image.nii.gz"));
    let gt_rel = rel(&rel_dir.join("gt.nii.gz"));
    let labels_rel = rel(&rel_dir.join("labels.nii.gz"));
    write_nifti(&scan.image, out.join(&image_rel))?;
    write_nifti(&gt, out.join(&gt_rel))?;
    write_nifti(&labels, out.join(&labels_rel))?;

    let acceptance = AcceptanceSummary::from(&scan.report);
    let gt_voxels = gt.count();
    let mut triplets = Vec::with_capacity(cfg.l);
    for l in 0..cfg.l {
        let prior_rng = root.descend(&[n, stage::PRIOR_FLM, m, p, l as u64]);
        let prior = simulate_prior(&gt, &resolved.realistic, &prior_rng);
        let prior = clamp_to_plausible(&prior, &labels, &cfg.forbidden_classes)?;
        let u: f64 = root.descend(&[n, stage::EMPTY_PRIOR, m, p, l as u64]).rng().gen();
        let empty_substituted = u < cfg.empty_prior_fraction;
        let prior = if empty_substituted { LesionMask::empty(labels.geom().clone()) } else { prior };
        let prior_rel = rel(&rel_dir.join(format!("prior-{l:02}.nii.gz")));
        write_nifti(&prior, out.join(&prior_rel))?;
        let prior_voxels = prior.count();
        triplets.push(TripletRecord {
            n: id.n,
            m: id.m,
            p: p as usize,
            l,
            image: image_rel.clone(),
            prior: prior_rel,
            gt: gt_rel.clone(),
            labels: labels_rel.clone(),
            prior_is_empty: prior_voxels == 0,
            empty_substituted,
            prior_voxels,
            gt_voxels,
            acceptance: acceptance.clone(),
            retries: scan.retries,
            prior_rng: prior_rng.path.clone(),
        });
    }
    let record = ScanRecord {
        n: id.n,
        m: id.m,
        p: p as usize,
        dir: rel(&rel_dir),
        aggressive_rng: aggressive_rng.path.clone(),
        aggressive_attempts,
        warp_rng: warp_rng.path.clone(),
        warp_attempts,
        affine: warp.params,
        svf_std: warp.svf_std,
        gmm_rng: gmm_rng.path.clone(),
        draw: scan.draw,
        report: scan.report,
        retries: scan.retries,
    };
    Ok((record, triplets))
}

/// Generate the full dataset under `cfg.output_dir` with at most `workers`
/// threads, write `manifest.json` there, and return the manifest.
pub fn generate_dataset(
    inputs: &[(LabelVolume, LesionMask)],
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<Manifest> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("inputs: at least one input pair is required".into()));
    }
    let resolved = Resolved {
        aggressive: cfg.aggressive.resolve()?,
        realistic: cfg.realistic.resolve()?,
    };
    let prepared = inputs
        .iter()
        .enumerate()
        .map(|(n, (parc, mask))| prepare_input(n, parc, mask, cfg))
        .collect::<Result<Vec<_>>>()?;
    let out = cfg.output_dir.clone();
    ensure_dir(&out)?;
    let root = RngStream::new(cfg.master_seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;

    let groups: Vec<(usize, usize)> = (0..prepared.len()).flat_map(|n| (0..cfg.m).map(move |m| (n, m))).collect();
    let results: Vec<Vec<(ScanRecord, Vec<TripletRecord>)>> = pool.install(|| {
        groups
            .par_iter()
            .map(|&(n, m)| {
                let (parc, mask) = &prepared[n];
                let aggressive_rng = root.descend(&[n as u64, stage::AGGRESSIVE_FLM, m as u64]);
                let (merged, attempts) = augment_mask(parc, mask, &resolved.aggressive, cfg, &aggressive_rng)
                    .map_err(|e| e.at(JobId { n, m, p: None }))?;
                (0..cfg.p)
                    .into_par_iter()
                    .map(|p| {
                        let id = JobId { n, m, p: Some(p) };
                        scan_job(id, &merged, &aggressive_rng, attempts, &resolved, cfg, &root, &out)
                            .map_err(|e| e.at(id))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut scans = Vec::with_capacity(groups.len() * cfg.p);
    let mut records = Vec::with_capacity(groups.len() * cfg.triplets_per_input());
    for (scan, triplets) in results.into_iter().flatten() {
        scans.push(scan);
        records.extend(triplets);
    }
    let mut snapshot = cfg.clone();
    snapshot.output_dir = PathBuf::from(".");
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        created: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: snapshot,
        inputs: prepared
            .iter()
            .enumerate()
            .map(|(index, (parc, mask))| InputSummary {
                index,
                dims: parc.dims(),
                spacing: parc.geom().spacing(),
                k: parc.k(),
                lesion_voxels: mask.count(),
            })
            .collect(),
        rng_layout: rng_layout(),
        scans,
        records,
    };
    manifest.write(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
