//! The `synth | train | cv | report` command surface.
//!
//! Every subcommand resolves a [`RunConfig`] from defaults, an optional JSON
//! file (`--config`) and command-line flags, in that order of precedence, and
//! writes the result to `run_config.json` in its output directory.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O failure,
//! 3 numeric failure during training.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cv::{self, CvOptions, FoldReport, TrainConfig};
use crate::data::{self, SynthConfig};
use crate::metrics::{self, Thresholds};
use crate::model::ModelConfig;
use crate::svg::{self, Series};
use crate::{Error, Result};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const ROC_RATIO_FILE: &str = "roc_ratio.csv";
pub const ROC_MAX_FILE: &str = "roc_max.csv";
pub const ROC_SVG_FILE: &str = "roc.svg";
pub const CHECKPOINT_FILE: &str = "model.chpv";
pub const LOSS_FILE: &str = "loss_history.json";

/// Everything needed to reproduce a run from its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the fold assignment. `--seed` also overwrites every nested
    /// seed (model, training, augmentation, synthesis).
    pub seed: u64,
    pub k: usize,
    pub stratified: bool,
    pub jobs: usize,
    pub image_threshold: f64,
    pub ratio_threshold: f64,
    pub max_threshold: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub manifest: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        RunConfig {
            seed: 0,
            k: 5,
            stratified: true,
            jobs: 1,
            image_threshold: t.image,
            ratio_threshold: t.ratio,
            max_threshold: t.max,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            manifest: None,
            results: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            image: self.image_threshold,
            ratio: self.ratio_threshold,
            max: self.max_threshold,
        }
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            k: self.k,
            seed: self.seed,
            stratified: self.stratified,
            jobs: self.jobs,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.train.augmentation.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        for (name, v) in [
            ("image threshold", self.image_threshold),
            ("ratio threshold", self.ratio_threshold),
            ("max threshold", self.max_threshold),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        self.model.validate()?;
        self.train.validate()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RUN_CONFIG_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("config types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Parser)]
#[command(name = "chipscan", version, about = "Multi-view CNN classification of cardiac MR view sets")]
pub struct Cli {
    /// Master seed; overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Folds trained concurrently.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with a manifest and ground-truth sidecar.
    Synth(SynthArgs),
    /// Train one model on every patient of a manifest.
    Train(TrainArgs),
    /// Grouped k-fold cross-validation with pooled patient-level metrics.
    Cv(CvArgs),
    /// Render the ROC plot of a cross-validation results directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub chip_fraction: Option<f64>,
    /// Amplitude of the planted patches.
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Side length images are resampled to.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Comma-separated channel counts of the four conv layers.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Disable all training-time augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub image_threshold: Option<f64>,
    #[arg(long)]
    pub ratio_threshold: Option<f64>,
    #[arg(long)]
    pub max_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long)]
    pub k: Option<usize>,
    /// Assign folds without balancing labels.
    #[arg(long)]
    pub no_stratify: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `cv`. Defaults to `--out`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

fn apply_train_args(cfg: &mut RunConfig, a: &TrainArgs) {
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(n) = a.image_size {
        cfg.model.image_size = n;
    }
    if let Some(c) = &a.channels {
        cfg.model.conv_channels = c.clone();
    }
    if let Some(h) = a.hidden {
        cfg.model.mlp_hidden = h;
    }
    if a.no_augment {
        let seed = cfg.train.augmentation.seed;
        cfg.train.augmentation = data::AugmentationConfig {
            seed,
            ..data::AugmentationConfig::disabled()
        };
    }
}

fn apply_thresholds(cfg: &mut RunConfig, a: &ThresholdArgs) {
    if let Some(v) = a.image_threshold {
        cfg.image_threshold = v;
    }
    if let Some(v) = a.ratio_threshold {
        cfg.ratio_threshold = v;
    }
    if let Some(v) = a.max_threshold {
        cfg.max_threshold = v;
    }
}

/// Defaults, then the `--config` file (or `fallback` when none is given and
/// it exists), then global flags.
fn base_config(cli: &Cli, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, fallback) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(path)) if path.is_file() => RunConfig::load(path)?,
        _ => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{flag} is required (flag or config file)")))
}

macro_rules! say {
    ($quiet:expr, $($arg:tt)*) => {
        if !$quiet {
            println!($($arg)*);
        }
    };
}

pub fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut cfg = base_config(cli, None)?;
    if let Some(n) = args.patients {
        cfg.synth.n_patients = n;
    }
    if let Some(f) = args.chip_fraction {
        cfg.synth.chip_fraction = f;
    }
    if let Some(s) = args.signal {
        cfg.synth.signal_strength = s;
    }
    if let Some(r) = args.missing_rate {
        cfg.synth.missing_view_rate = r;
    }
    if let Some(n) = args.image_size {
        cfg.synth.image_size = n;
    }
    let out = require(&cfg.out, "--out")?.to_path_buf();
    cfg.synth.validate()?;
    let summary = data::generate_synthetic(&cfg.synth, &out)?;
    cfg.manifest = Some(summary.manifest_path.clone());
    cfg.write(&out)?;
    say!(cli.quiet, "{summary}");
    Ok(())
}

pub fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut cfg = base_config(cli, None)?;
    apply_train_args(&mut cfg, args);
    cfg.validate()?;
    let manifest = require(&cfg.manifest, "--manifest")?.to_path_buf();
    let out = require(&cfg.out, "--out")?.to_path_buf();
    let records = data::load_manifest(&manifest, cfg.model.image_size)?;

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.write(&out)?;
    let refs: Vec<&data::PatientRecord> = records.iter().collect();
    let outcome = cv::train_fold(&refs, &cfg.train, &cfg.model)?;
    outcome.model.save(&out.join(CHECKPOINT_FILE))?;
    write_json(
        &out.join(LOSS_FILE),
        &serde_json::json!({ "loss_history": outcome.loss_history }),
    )?;
    match outcome.loss_history.last() {
        Some(loss) => say!(cli.quiet, "trained on {} patients; final loss {loss:.6}", records.len()),
        None => say!(cli.quiet, "0 epochs: saved the freshly initialised model"),
    }
    Ok(())
}

pub fn cmd_cv(cli: &Cli, args: &CvArgs) -> Result<()> {
    let mut cfg = base_config(cli, None)?;
    apply_train_args(&mut cfg, &args.train);
    apply_thresholds(&mut cfg, &args.thresholds);
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if args.no_stratify {
        cfg.stratified = false;
    }
    cfg.validate()?;
    let manifest = require(&cfg.manifest, "--manifest")?.to_path_buf();
    let out = require(&cfg.out, "--out")?.to_path_buf();
    let records = data::load_manifest(&manifest, cfg.model.image_size)?;
    // fail on an impossible k before anything is written
    cv::make_folds(&records, cfg.k, cfg.seed, cfg.stratified)?;

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.write(&out)?;
    let reports = cv::run_cv(&records, &cfg.train, &cfg.model, &cfg.cv_options(), Some(&out))?;
    let eval = metrics::evaluate(&reports, cfg.thresholds())?;
    write_json(&out.join(METRICS_FILE), &eval.metrics)?;
    metrics::write_roc_csv(&out.join(ROC_RATIO_FILE), &eval.ratio_roc)?;
    metrics::write_roc_csv(&out.join(ROC_MAX_FILE), &eval.max_roc)?;
    say!(
        cli.quiet,
        "{} patients: ratio AUC {:.4}, max AUC {:.4}, ratio accuracy {:.4}",
        eval.metrics.n_patients,
        eval.metrics.auc_ratio,
        eval.metrics.auc_max,
        eval.metrics.accuracy_ratio
    );
    Ok(())
}

pub fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let results = args
        .results
        .clone()
        .or_else(|| cli.out.clone())
        .ok_or_else(|| Error::Config("--results is required".into()))?;
    let mut cfg = base_config(cli, Some(&results.join(RUN_CONFIG_FILE)))?;
    apply_thresholds(&mut cfg, &args.thresholds);
    cfg.results = Some(results.clone());
    let out = cli.out.clone().unwrap_or_else(|| results.clone());
    cfg.out = Some(out.clone());
    cfg.validate()?;

    let reports: Vec<FoldReport> = cv::read_fold_reports(&results).map_err(|e| match e {
        Error::Io { path, source } => Error::Data(format!("cannot read fold reports at {}: {source}", path.display())),
        other => other,
    })?;
    let eval = metrics::evaluate(&reports, cfg.thresholds())?;
    let svg = svg::roc_svg(
        "Patient-level ROC",
        &[
            Series {
                label: "ratio",
                color: "#1f77b4",
                curve: &eval.ratio_roc,
            },
            Series {
                label: "max",
                color: "#d62728",
                curve: &eval.max_roc,
            },
        ],
    );
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join(ROC_SVG_FILE);
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    cfg.write(&out)?;
    say!(
        cli.quiet,
        "wrote {} (ratio AUC {:.4}, max AUC {:.4})",
        path.display(),
        eval.metrics.auc_ratio,
        eval.metrics.auc_max
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Cv(a) => cmd_cv(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
