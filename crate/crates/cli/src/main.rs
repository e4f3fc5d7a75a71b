use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lesionsynth::flm::{clamp_to_plausible, simulate_prior, FlmConfig};
use lesionsynth::infer::{
    pack_input, predictor_from_name, preprocess, sliding_window_predict, binarize, MirrorTta, Predictor,
    DEFAULT_PATCH, DEFAULT_STEP_FRACTION, DEFAULT_THRESHOLD,
};
use lesionsynth::metrics::{evaluate_case, read_case_csv, write_case_csv, CaseRow};
use lesionsynth::pipeline::{
    generate_dataset, load_inputs, verify_manifest, Manifest, PipelineConfig, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
    TOOL_VERSION,
};
use lesionsynth::rng::{stage, RngStream};
use lesionsynth::stats::{aggregate_report, MetricsTable};
use lesionsynth::volume::{read_nifti, write_nifti, Resample};
use lesionsynth::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Verbosity {
    Quiet,
    Normal,
    Debug,
}

#[derive(Debug, Parser)]
#[command(name = "lesionsynth", about = "Synthetic longitudinal lesion datasets and segmentation evaluation")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, env = "LESIONSYNTH_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "LESIONSYNTH_WORKERS", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,

    #[arg(long, global = true, value_enum, default_value = "normal", env = "LESIONSYNTH_VERBOSITY")]
    verbosity: Verbosity,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a training dataset from a JSON pipeline configuration.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a generated dataset against its manifest.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Simulate prior-timepoint masks from a lesion mask.
    Flm {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        parc: PathBuf,
        /// Preset name or path to a JSON FLM configuration.
        #[arg(long, default_value = "realistic")]
        preset: String,
        #[arg(long, short = 'n', default_value_t = 1)]
        n: usize,
        /// Parcellation classes lesions may not occupy.
        #[arg(long, value_delimiter = ',')]
        forbidden: Vec<u16>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate predicted masks against ground truth, pairing files by name.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate per-case metric CSVs into summary, comparison and
    /// Bland-Altman tables.
    Report {
        /// `[DATASET/]METHOD=PATH`, or a bare path (method = file stem).
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Preprocess a scan (and optional prior) into the two-channel input.
    InferPrep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also run a reference predictor: constant:<c>, copy-prior, threshold:<t>.
        #[arg(long)]
        predictor: Option<String>,
        /// Patch shape as `X,Y,Z`.
        #[arg(long, value_delimiter = ',')]
        patch: Option<Vec<usize>>,
        #[arg(long, action = ArgAction::SetTrue)]
        tta: bool,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let is_config = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(Error::InvalidConfig(_)) | Some(Error::Json(_))
            ) || c.downcast_ref::<serde_json::Error>().is_some()
        });
        if is_config {
            Failure::Usage(format!("{e:#}"))
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

type CmdResult = Result<serde_json::Value, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let version = format!("{TOOL_VERSION} (manifest schema {MANIFEST_SCHEMA_VERSION})");
    let cmd = Cli::command().version(&*Box::leak(version.into_boxed_str()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let workers = cli
        .workers
        .map(|w| w as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let result = run(&cli, workers);
    match result {
        Ok(summary) => {
            if cli.verbosity != Verbosity::Quiet {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: config: {}", one_line(&msg));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: runtime: {}", one_line(&format!("{e:#}")));
            ExitCode::from(1)
        }
    }
}

fn debug(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbosity == Verbosity::Debug {
        eprintln!("debug: {}", msg.as_ref());
    }
}

fn run(cli: &Cli, workers: usize) -> CmdResult {
    match &cli.command {
        Command::Synth { config, out } => cmd_synth(cli, config, out.as_deref(), workers),
        Command::Verify { dataset } => cmd_verify(dataset),
        Command::Flm {
            mask,
            parc,
            preset,
            n,
            forbidden,
            out,
        } => cmd_flm(cli, mask, parc, preset, *n, forbidden, out),
        Command::Eval { gt, pred, out } => cmd_eval(gt, pred, out),
        Command::Report { metrics, out } => cmd_report(metrics, out),
        Command::InferPrep {
            input,
            prior,
            out,
            predictor,
            patch,
            tta,
        } => cmd_infer_prep(input, prior.as_deref(), out, predictor.as_deref(), patch.as_deref(), *tta),
    }
}

fn read_config(path: &Path) -> Result<PipelineConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_synth(cli: &Cli, config: &Path, out: Option<&Path>, workers: usize) -> CmdResult {
    let mut cfg = read_config(config)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    match out {
        Some(o) => cfg.output_dir = o.to_path_buf(),
        None if cfg.output_dir.as_os_str().is_empty() => return Err(usage("no output directory: pass --out or set output_dir")),
        None => cfg.output_dir = base.join(&cfg.output_dir),
    }
    cfg.validate()?;
    if cfg.inputs.is_empty() {
        return Err(usage("inputs: the config lists no input pairs"));
    }
    let inputs = load_inputs(&cfg.inputs, base).context("loading inputs")?;
    debug(cli, format!("{} input pair(s), {} worker(s)", inputs.len(), workers));
    let manifest = generate_dataset(&inputs, &cfg, workers)?;
    Ok(json!({
        "command": "synth",
        "output_dir": cfg.output_dir,
        "inputs": manifest.inputs.len(),
        "scans": manifest.scans.len(),
        "records": manifest.records.len(),
    }))
}

fn cmd_verify(dataset: &Path) -> CmdResult {
    let manifest = Manifest::read(dataset.join(MANIFEST_FILE))?;
    let report = verify_manifest(&manifest, dataset);
    let passed = report.all_passed();
    let summary = json!({
        "command": "verify",
        "passed": passed,
        "checks": report.checks,
    });
    if !passed {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(Failure::Runtime(anyhow::anyhow!("verification failed: {}", failed.join(", "))));
    }
    Ok(summary)
}

fn load_flm(preset: &str) -> Result<FlmConfig, Failure> {
    let path = Path::new(preset);
    let cfg = if preset.ends_with(".json") {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {preset}: {e}")))?;
        serde_json::from_str::<FlmConfig>(&text).map_err(|e| usage(format!("{preset}: {e}")))?
    } else {
        FlmConfig::preset(preset).map_err(|e| usage(e.to_string()))?
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_flm(cli: &Cli, mask: &Path, parc: &Path, preset: &str, n: usize, forbidden: &[u16], out: &Path) -> CmdResult {
    let flm = load_flm(preset)?;
    if n == 0 {
        return Err(usage("n: must be at least 1"));
    }
    let mask = read_nifti(mask)?.into_mask();
    let parc = read_nifti(parc)?.into_labels()?;
    let root = RngStream::new(cli.seed.unwrap_or(0)).child(stage::STANDALONE_FLM);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::with_capacity(n);
    for i in 0..n {
        let prior = simulate_prior(&mask, &flm, &root.child(i as u64));
        let prior = clamp_to_plausible(&prior, &parc, forbidden)?;
        let path = out.join(format!("prior-{i:03}.nii.gz"));
        write_nifti(&prior, &path)?;
        files.push(path);
    }
    Ok(json!({ "command": "flm", "preset": flm.name, "files": files }))
}

/// File name without `.nii` / `.nii.gz`, for NIfTI files only.
fn case_id(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .map(str::to_string)
}

fn nifti_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| usage(format!("cannot list {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("listing {}", dir.display()))?.path();
        if let Some(id) = case_id(&path) {
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_eval(gt: &Path, pred: &Path, out: &Path) -> CmdResult {
    let gt_files = nifti_files(gt)?;
    let pred_files = nifti_files(pred)?;
    let gt_ids: Vec<&String> = gt_files.iter().map(|(id, _)| id).collect();
    let pred_ids: Vec<&String> = pred_files.iter().map(|(id, _)| id).collect();
    let mut orphans: Vec<String> = gt_ids
        .iter()
        .filter(|id| !pred_ids.contains(id))
        .map(|id| format!("gt:{id}"))
        .collect();
    orphans.extend(pred_ids.iter().filter(|id| !gt_ids.contains(id)).map(|id| format!("pred:{id}")));
    if !orphans.is_empty() {
        return Err(usage(format!("unmatched files: {}", orphans.join(" "))));
    }
    if gt_files.is_empty() {
        return Err(usage(format!("no NIfTI files in {}", gt.display())));
    }
    let mut rows = Vec::with_capacity(gt_files.len());
    for ((id, g), (_, p)) in gt_files.iter().zip(&pred_files) {
        let g = read_nifti(g)?.into_mask();
        let p = read_nifti(p)?.into_mask();
        let m = evaluate_case(&g, &p).with_context(|| format!("case {id}"))?;
        rows.push(CaseRow::new(id.clone(), &m));
    }
    write_case_csv(out, &rows)?;
    Ok(json!({ "command": "eval", "cases": rows.len(), "out": out }))
}

fn parse_metrics_arg(arg: &str) -> Result<(String, String, PathBuf), Failure> {
    match arg.split_once('=') {
        Some((label, path)) => {
            let (dataset, method) = match label.split_once('/') {
                Some((d, m)) => (d.to_string(), m.to_string()),
                None => ("all".to_string(), label.to_string()),
            };
            if method.is_empty() {
                return Err(usage(format!("metrics: empty method name in '{arg}'")));
            }
            Ok((dataset, method, PathBuf::from(path)))
        }
        None => {
            let path = PathBuf::from(arg);
            let method = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| usage(format!("metrics: cannot derive a method name from '{arg}'")))?
                .to_string();
            Ok(("all".to_string(), method, path))
        }
    }
}

fn cmd_report(metrics: &[String], out: &Path) -> CmdResult {
    let mut tables = Vec::with_capacity(metrics.len());
    for arg in metrics {
        let (dataset, method, path) = parse_metrics_arg(arg)?;
        if !path.is_file() {
            return Err(usage(format!("metrics file {} does not exist", path.display())));
        }
        let rows = read_case_csv(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        tables.push(MetricsTable { dataset, method, rows });
    }
    let report = aggregate_report(&tables).map_err(|e| usage(e.to_string()))?;
    report.write(out)?;
    Ok(json!({
        "command": "report",
        "tables": tables.len(),
        "comparisons": report.comparisons.len(),
        "out": out,
    }))
}

fn cmd_infer_prep(
    input: &Path,
    prior: Option<&Path>,
    out: &Path,
    predictor: Option<&str>,
    patch: Option<&[usize]>,
    tta: bool,
) -> CmdResult {
    let scan = read_nifti(input)?.into_scalar();
    let image = preprocess(&scan).with_context(|| format!("preprocessing {}", input.display()))?;
    let prior_mask = match prior {
        Some(p) => Some(read_nifti(p)?.into_mask()),
        None => None,
    };
    let packed = pack_input(&image, prior_mask.as_ref())?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_nifti(&packed.image, out.join("image.nii.gz"))?;
    write_nifti(&packed.prior, out.join("prior.nii.gz"))?;
    let mut summary = json!({
        "command": "infer-prep",
        "dims": packed.image.geometry().dims(),
        "prior_voxels": packed.prior.count(),
        "out": out,
    });
    if let Some(name) = predictor {
        let patch = match patch {
            Some(&[x, y, z]) if x > 0 && y > 0 && z > 0 => [x, y, z],
            Some(p) => return Err(usage(format!("patch: expected three positive sizes, got {p:?}"))),
            None => DEFAULT_PATCH,
        };
        let base = predictor_from_name(name, patch).map_err(|e| usage(e.to_string()))?;
        let model: Box<dyn Predictor> = if tta { Box::new(MirrorTta::new(base)) } else { base };
        let prob = sliding_window_predict(&packed, &model, DEFAULT_STEP_FRACTION)?;
        let mask = binarize(&prob, DEFAULT_THRESHOLD);
        write_nifti(&prob, out.join("prob.nii.gz"))?;
        write_nifti(&mask, out.join("mask.nii.gz"))?;
        summary["lesion_voxels"] = json!(mask.count());
    }
    Ok(summary)
}
