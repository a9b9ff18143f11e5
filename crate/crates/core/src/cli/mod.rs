//! Command-line entry point.
//!
//! Every flag can also come from an `EVALTALKER_*` environment variable or
//! from a `--config` file (TOML or JSON). File values win over flags. The
//! file is a flat table of flag names in snake_case; a table named after a
//! subcommand (for example `[train]`) applies to that subcommand only.
//! Each run logs its merged settings as JSON, which is itself a valid config
//! file for replaying the run.

mod stages;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stages::{
    e2e, evaluate, export, extract, folds, infer, process, read_predictions, serve, train, validate,
    write_predictions, E2eSummary, PredictionRow,
};

use crate::subjective::RawScale;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing input path(s): {}", .0.join(", "))]
    MissingPaths(Vec<String>),
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Subjective(#[from] crate::subjective::SubjectiveError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Study(#[from] crate::study::StudyError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingPaths(_) => "missing-paths",
            CliError::Io(..) => "io",
            CliError::Dataset(_) => "dataset",
            CliError::Subjective(_) => "subjective",
            CliError::Metrics(_) => "metrics",
            CliError::Model(_) => "model",
            CliError::Study(_) => "study",
            CliError::Invalid(_) => "invalid",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "evaltalker", version, about = "Talking-human quality assessment toolkit")]
pub struct Cli {
    /// Settings file (TOML or JSON); its values override flags.
    #[arg(long, global = true, env = "EVALTALKER_CONFIG")]
    pub config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `evaltalker=debug`.
    #[arg(long, global = true, env = "EVALTALKER_LOG", default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest against its invariants and declared counts.
    Validate(ValidateArgs),
    /// Assign sources to content-disjoint folds.
    Folds(FoldsArgs),
    /// Ratings CSV to MOS table.
    Process(ProcessArgs),
    /// Compute and cache per-stimulus features.
    Extract(ExtractArgs),
    /// Cross-validated training of the regression head.
    Train(TrainArgs),
    /// Predict with a trained model.
    Infer(InferArgs),
    /// Fold-wise SRCC/PLCC/KRCC/RMSE.
    Evaluate(EvaluateArgs),
    /// Run the rating-study HTTP service.
    Serve(ServeArgs),
    /// Write the study's ratings CSV from its event log.
    Export(ExportArgs),
    /// Synthetic end-to-end run: ratings, MOS, folds, features, training, metrics.
    E2e(E2eArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[arg(long, env = "EVALTALKER_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Also check that media files exist under this directory.
    #[arg(long, env = "EVALTALKER_MEDIA_ROOT")]
    pub media_root: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FoldsArgs {
    #[arg(long, env = "EVALTALKER_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 5, env = "EVALTALKER_K")]
    pub k: usize,
    #[arg(long, default_value_t = 0, env = "EVALTALKER_SEED")]
    pub seed: u64,
    #[arg(long, default_value = "folds.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProcessArgs {
    #[arg(long, env = "EVALTALKER_RATINGS")]
    pub ratings: Option<PathBuf>,
    #[arg(long, default_value = "mos.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Bounds of the raw rating scale, `lo,hi`.
    #[arg(long, default_value = "0,5", env = "EVALTALKER_RAW_SCALE")]
    pub raw_scale: RawScale,
    /// Skip outlier-rater screening.
    #[arg(long, env = "EVALTALKER_NO_SCREENING")]
    pub no_screening: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    #[arg(long, env = "EVALTALKER_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// `stub`, `oracle` or `real`.
    #[arg(long, default_value = "stub", env = "EVALTALKER_BACKEND_SET")]
    pub backend_set: String,
    /// Feature directory; an existing cache there is reused when valid.
    #[arg(long, default_value = "features")]
    pub out: PathBuf,
    /// MOS table for the oracle set.
    #[arg(long, env = "EVALTALKER_MOS")]
    pub mos: Option<PathBuf>,
    /// Endpoint file for the real set.
    #[arg(long, env = "EVALTALKER_REMOTE_CONFIG")]
    pub remote_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0, env = "EVALTALKER_SEED")]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, env = "EVALTALKER_FEATURES")]
    pub features: Option<PathBuf>,
    #[arg(long, env = "EVALTALKER_MOS")]
    pub mos: Option<PathBuf>,
    #[arg(long, env = "EVALTALKER_FOLDS")]
    pub folds: Option<PathBuf>,
    /// Model directory; receives model.json and the held-out pred.csv.
    #[arg(long, default_value = "model")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0, env = "EVALTALKER_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InferArgs {
    #[arg(long, env = "EVALTALKER_FEATURES")]
    pub features: Option<PathBuf>,
    #[arg(long, env = "EVALTALKER_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "pred.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long, env = "EVALTALKER_PRED")]
    pub pred: Option<PathBuf>,
    #[arg(long, env = "EVALTALKER_MOS")]
    pub mos: Option<PathBuf>,
    #[arg(long, env = "EVALTALKER_FOLDS")]
    pub folds: Option<PathBuf>,
    /// Resolves source ids when pred.csv has no source_id column.
    #[arg(long, env = "EVALTALKER_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Report PLCC/RMSE on raw predictions instead of after logistic mapping.
    #[arg(long)]
    pub no_fit: bool,
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long, env = "EVALTALKER_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Holds plan.json, events.jsonl and snapshot.json.
    #[arg(long, env = "EVALTALKER_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, env = "EVALTALKER_SERVICE_CONFIG")]
    pub service_config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080", env = "EVALTALKER_BIND")]
    pub bind: String,
    /// Overrides the media root of the service config.
    #[arg(long, env = "EVALTALKER_MEDIA_ROOT")]
    pub media_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[arg(long, env = "EVALTALKER_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "EVALTALKER_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, env = "EVALTALKER_SERVICE_CONFIG")]
    pub service_config: Option<PathBuf>,
    #[arg(long, default_value = "ratings.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct E2eArgs {
    #[arg(long, default_value_t = 7, env = "EVALTALKER_SEED")]
    pub seed: u64,
    #[arg(long, default_value = "e2e")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub sources: usize,
    #[arg(long, default_value_t = 5)]
    pub generators: usize,
    #[arg(long, default_value_t = 20)]
    pub raters: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Backend sets to train and score, comma separated.
    #[arg(long, default_value = "oracle,stub", value_delimiter = ',')]
    pub backend_sets: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
}

/// Read a TOML or JSON file, chosen by extension.
pub fn read_config_file<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    let bad = |e: String| CliError::Usage(format!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
        _ => toml::from_str(&text).map_err(|e| bad(e.to_string())),
    }
}

/// Overlay file settings onto parsed flags. Top-level keys apply to every
/// subcommand that has such a flag; the `section` table applies last.
fn overlay<T: Serialize + DeserializeOwned>(args: T, file: &serde_json::Value, section: &str) -> Result<T, CliError> {
    let mut value = serde_json::to_value(&args).expect("args serialize");
    let target = value.as_object_mut().expect("args are a struct");
    let Some(root) = file.as_object() else {
        return Err(CliError::Usage("config file must be a table".into()));
    };
    let scoped = root.get(section).and_then(|v| v.as_object());
    // No flag shares a name with a subcommand, so section tables never
    // match a field at the top level.
    for (key, v) in root.iter().chain(scoped.into_iter().flatten()) {
        if target.contains_key(key) {
            target.insert(key.clone(), v.clone());
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config for `{section}`: {e}")))
}

fn merged<T: Serialize + DeserializeOwned>(args: T, config: Option<&serde_json::Value>, section: &str) -> Result<T, CliError> {
    let args = match config {
        Some(file) => overlay(args, file, section)?,
        None => args,
    };
    let logged = serde_json::to_string(&args).expect("args serialize");
    tracing::info!(command = section, run_config = %logged, "run configuration");
    Ok(args)
}

pub(crate) fn need<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required (flag, EVALTALKER_* variable or config file)")))
}

/// Fail with every missing input at once.
pub(crate) fn check_inputs(paths: &[&Path]) -> Result<(), CliError> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingPaths(missing))
    }
}

fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let config: Option<serde_json::Value> = cli.config.as_deref().map(read_config_file).transpose()?;
    let config = config.as_ref();
    match cli.command {
        Command::Validate(a) => validate(&merged(a, config, "validate")?),
        Command::Folds(a) => folds(&merged(a, config, "folds")?),
        Command::Process(a) => process(&merged(a, config, "process")?),
        Command::Extract(a) => extract(&merged(a, config, "extract")?),
        Command::Train(a) => train(&merged(a, config, "train")?),
        Command::Infer(a) => infer(&merged(a, config, "infer")?),
        Command::Evaluate(a) => evaluate(&merged(a, config, "evaluate")?).map(|_| ()),
        Command::Serve(a) => serve(&merged(a, config, "serve")?),
        Command::Export(a) => export(&merged(a, config, "export")?),
        Command::E2e(a) => e2e(&merged(a, config, "e2e")?).map(|_| ()),
    }
}

/// Parse `argv`, set up logging and run. Errors go to stderr as one JSON
/// object and produce exit code 1; usage errors exit with 2.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging(&cli.log);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(kind = e.kind(), "{e}");
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
        }
    }
}
