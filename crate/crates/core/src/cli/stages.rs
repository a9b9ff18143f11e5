//! One function per subcommand. Each validates its inputs, runs the stage,
//! writes its artifacts and prints a short table to stdout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_inputs, need, read_config_file, CliError};
use super::{E2eArgs, EvaluateArgs, ExportArgs, ExtractArgs, FoldsArgs, InferArgs, ProcessArgs, ServeArgs, TrainArgs, ValidateArgs};
use crate::dataset::{load_manifest, make_folds, validate_manifest, validate_manifest_with_media, FoldPlan, StimulusSet};
use crate::metrics::{evaluate_folds, CrossValidationReport, MetricReport};
use crate::model::remote::RemoteConfig;
use crate::model::{extract_all, BackendOptions, BackendRegistry, FeatureCache, ManifestProbe, TrainConfig, TrainedModel};
use crate::study::http::AppState;
use crate::study::{ServiceConfig, StudyService, SystemClock};
use crate::subjective::{process_ratings, read_ratings_csv, write_ratings_csv, ProcessConfig, ScreeningConfig, SubjectiveTable};
use crate::synthetic::{simulate_study, synthetic_manifest, StudyConfig};

pub const MODEL_FILE: &str = "model.json";
pub const PRED_FILE: &str = "pred.csv";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).expect("serializable");
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

fn load_mos(path: &Path) -> Result<SubjectiveTable, CliError> {
    Ok(SubjectiveTable::read_csv(open(path)?)?)
}

fn mos_map(table: &SubjectiveTable) -> BTreeMap<String, f64> {
    table.rows.iter().map(|(k, v)| (k.clone(), v.mos)).collect()
}

/// One row of pred.csv. `source_id` is optional on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub stimulus_id: String,
    pub pred: f64,
    #[serde(default)]
    pub source_id: Option<String>,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, CliError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in r.deserialize::<PredictionRow>().enumerate() {
        let mut row = row.map_err(|e| CliError::Invalid(format!("{} row {}: {e}", path.display(), i + 2)))?;
        if row.source_id.as_deref().is_some_and(str::is_empty) {
            row.source_id = None;
        }
        if !row.pred.is_finite() {
            return Err(CliError::Invalid(format!("{}: non-finite prediction for `{}`", path.display(), row.stimulus_id)));
        }
        if !seen.insert(row.stimulus_id.clone()) {
            return Err(CliError::Invalid(format!("{}: duplicate stimulus `{}`", path.display(), row.stimulus_id)));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn print_metrics(title: &str, report: &CrossValidationReport) {
    println!("{title} (logistic mapping: {})", if report.fitted { "on" } else { "off" });
    println!("{:>6} {:>6} {:>8} {:>8} {:>8} {:>8}", "fold", "n", "SRCC", "PLCC", "KRCC", "RMSE");
    let row = |name: &str, r: &MetricReport| {
        println!(
            "{name:>6} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.n, r.srcc, r.plcc, r.krcc, r.rmse
        );
    };
    for f in &report.folds {
        row(&f.fold.to_string(), &f.report);
    }
    row("mean", &report.mean);
    if let Some(w) = &report.mean.warning {
        println!("warning: {w}");
    }
}

pub fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    let manifest = need(&args.manifest, "manifest")?;
    let mut inputs = vec![manifest];
    inputs.extend(args.media_root.as_deref());
    check_inputs(&inputs)?;
    let set = load_manifest(manifest)?;
    let report = match &args.media_root {
        Some(root) => validate_manifest_with_media(&set, root),
        None => validate_manifest(&set),
    };
    let declared = set.declared_counts.clone().unwrap_or_default();
    println!("{:<10} {:>8} {:>10}", "generator", "stimuli", "declared");
    for (label, n) in &report.counts_by_label {
        let d = declared
            .get(label)
            .map_or_else(|| "-".to_string(), |d| format!("{}/{}", d.generated, d.attempted));
        println!("{label:<10} {n:>8} {d:>10}");
    }
    println!("{:<10} {:>8}", "total", report.total_stimuli);
    for f in &report.findings {
        println!("finding: {}", serde_json::to_string(f).expect("finding serializes"));
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    let blocking = report
        .findings
        .iter()
        .filter(|f| !matches!(f, crate::dataset::Finding::MissingMedia { .. }))
        .count();
    if blocking > 0 {
        return Err(CliError::Invalid(format!("manifest has {blocking} blocking finding(s)")));
    }
    Ok(())
}

pub fn folds(args: &FoldsArgs) -> Result<(), CliError> {
    let manifest = need(&args.manifest, "manifest")?;
    check_inputs(&[manifest])?;
    let set = load_manifest(manifest)?;
    let plan = make_folds(&set, args.k, args.seed)?;
    let mut w = create(&args.out)?;
    writeln!(w, "{}", plan.to_json()).and_then(|_| w.flush()).map_err(io_err(&args.out))?;
    let by_fold = plan.stimulus_folds(
        set.stimuli
            .iter()
            .map(|s| (s.stimulus_id.as_str(), s.source_id.as_str())),
    );
    println!("{:>6} {:>8} {:>8}", "fold", "sources", "stimuli");
    for (f, (sources, stimuli)) in plan.folds().iter().zip(&by_fold).enumerate() {
        println!("{f:>6} {:>8} {:>8}", sources.len(), stimuli.len());
    }
    Ok(())
}

pub fn process(args: &ProcessArgs) -> Result<(), CliError> {
    let ratings = need(&args.ratings, "ratings")?;
    check_inputs(&[ratings])?;
    let records = read_ratings_csv(open(ratings)?, args.raw_scale)?;
    let cfg = ProcessConfig {
        scale: args.raw_scale,
        screening: (!args.no_screening).then(ScreeningConfig::default),
    };
    let (table, report) = process_ratings(&records, &cfg)?;
    let mut w = create(&args.out)?;
    table.write_csv(&mut w)?;
    w.flush().map_err(io_err(&args.out))?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    println!("ratings      {}", report.rows_consumed);
    println!("superseded   {}", report.superseded_duplicates);
    println!("retained     {}", report.retained_subjects.len());
    println!("rejected     {}", report.rejected_subjects.len());
    println!("degenerate   {}", report.degenerate_subjects.len());
    println!("stimuli      {}", report.stimuli);
    println!("distortions  {}", report.distortion_instances);
    Ok(())
}

fn backend_options(args: &ExtractArgs, mos: Option<BTreeMap<String, f64>>) -> Result<BackendOptions, CliError> {
    let remote = args
        .remote_config
        .as_deref()
        .map(read_config_file::<RemoteConfig>)
        .transpose()?;
    Ok(BackendOptions {
        seed: args.seed,
        mos,
        remote,
        ..Default::default()
    })
}

fn run_extract(set: &StimulusSet, name: &str, options: &BackendOptions, out: &Path) -> Result<FeatureCache, CliError> {
    let backends = BackendRegistry::with_defaults().build(name, options)?;
    let versions = backends.versions();
    tracing::info!(backend_set = name, seed = options.seed, versions = %serde_json::to_string(&versions).expect("serializes"), "extracting features");
    let path = FeatureCache::path_in(out);
    let previous = if path.exists() {
        match FeatureCache::load(&path) {
            Ok(c) => Some(c),
            Err(e) => {
                tracing::warn!(error = %e, "ignoring unreadable feature cache");
                None
            }
        }
    } else {
        None
    };
    let cache = extract_all(set, &backends, &ManifestProbe, previous.as_ref())?;
    cache.write(out)?;
    Ok(cache)
}

pub fn extract(args: &ExtractArgs) -> Result<(), CliError> {
    let manifest = need(&args.manifest, "manifest")?;
    let mut inputs = vec![manifest];
    inputs.extend(args.mos.as_deref());
    inputs.extend(args.remote_config.as_deref());
    check_inputs(&inputs)?;
    let mut set = load_manifest(manifest)?;
    let mos = match &args.mos {
        Some(p) => Some(mos_map(&load_mos(p)?)),
        None => None,
    };
    if let (Some(m), "oracle") = (&mos, args.backend_set.as_str()) {
        let before = set.len();
        set.stimuli.retain(|s| m.contains_key(&s.stimulus_id));
        if set.len() < before {
            tracing::warn!(skipped = before - set.len(), "oracle set: stimuli without MOS skipped");
        }
    }
    let cache = run_extract(&set, &args.backend_set, &backend_options(args, mos)?, &args.out)?;
    let warned = cache.records.values().filter(|r| !r.warnings.is_empty()).count();
    println!("stimuli   {}", cache.records.len());
    println!("warnings  {warned}");
    println!("cache     {}", FeatureCache::path_in(&args.out).display());
    Ok(())
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        hidden: args.hidden,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        seed: args.seed,
        ..Default::default()
    }
}

fn held_out_rows(preds: &[BTreeMap<String, f64>], sources: &BTreeMap<String, String>) -> Vec<PredictionRow> {
    let mut rows: Vec<PredictionRow> = preds
        .iter()
        .flatten()
        .map(|(id, &pred)| PredictionRow {
            stimulus_id: id.clone(),
            pred,
            source_id: sources.get(id).cloned(),
        })
        .collect();
    rows.sort_by(|a, b| a.stimulus_id.cmp(&b.stimulus_id));
    rows
}

fn run_train(cache: &FeatureCache, table: &SubjectiveTable, plan: &FoldPlan, cfg: &TrainConfig, out: &Path) -> Result<TrainedModel, CliError> {
    let fused = cache.fused()?;
    let sources = cache.sources();
    let output = crate::model::train(&fused, &sources, table, plan, cfg)?;
    for f in &output.model.folds {
        tracing::info!(
            fold = f.fold,
            train_size = f.train_size,
            first_loss = f.loss_history.first().copied().unwrap_or(f64::NAN),
            final_loss = f.loss_history.last().copied().unwrap_or(f64::NAN),
            "fold trained"
        );
    }
    write_json(&out.join(MODEL_FILE), &output.model)?;
    write_predictions(&out.join(PRED_FILE), &held_out_rows(&output.predictions, &sources))?;
    Ok(output.model)
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let features = need(&args.features, "features")?;
    let mos = need(&args.mos, "mos")?;
    let folds = need(&args.folds, "folds")?;
    check_inputs(&[features, mos, folds])?;
    let cache = FeatureCache::load(features)?;
    let table = load_mos(mos)?;
    let plan = FoldPlan::load(folds)?;
    let model = run_train(&cache, &table, &plan, &train_config(args), &args.out)?;
    println!("{:>6} {:>8} {:>12}", "fold", "train_n", "final_mse");
    for f in &model.folds {
        println!("{:>6} {:>8} {:>12.6}", f.fold, f.train_size, f.loss_history.last().copied().unwrap_or(f64::NAN));
    }
    println!("model written to {}", args.out.join(MODEL_FILE).display());
    Ok(())
}

fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    let file = if path.is_dir() { path.join(MODEL_FILE) } else { path.to_path_buf() };
    let model: TrainedModel = serde_json::from_reader(open(&file)?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", file.display())))?;
    if model.format_version != TrainedModel::FORMAT_VERSION {
        return Err(CliError::Invalid(format!(
            "{}: model format {} is not supported",
            file.display(),
            model.format_version
        )));
    }
    Ok(model)
}

fn run_infer(model: &TrainedModel, cache: &FeatureCache) -> Result<Vec<PredictionRow>, CliError> {
    cache
        .records
        .values()
        .map(|r| {
            Ok(PredictionRow {
                stimulus_id: r.stimulus_id.clone(),
                pred: model.predict(Some(&r.source_id), &r.fused()?)?,
                source_id: Some(r.source_id.clone()),
            })
        })
        .collect()
}

pub fn infer(args: &InferArgs) -> Result<(), CliError> {
    let features = need(&args.features, "features")?;
    let model = need(&args.model, "model")?;
    check_inputs(&[features, model])?;
    let model = load_model(model)?;
    let cache = FeatureCache::load(features)?;
    let rows = run_infer(&model, &cache)?;
    write_predictions(&args.out, &rows)?;
    let outside = rows
        .iter()
        .filter(|r| r.source_id.as_deref().and_then(|s| model.plan.fold_of(s)).is_none())
        .count();
    println!("predictions  {}", rows.len());
    println!("unseen       {outside}");
    Ok(())
}

/// Group predictions by fold and score them against MOS.
fn score(
    rows: &[PredictionRow],
    table: &SubjectiveTable,
    plan: &FoldPlan,
    manifest_sources: Option<&BTreeMap<String, String>>,
    fitted: bool,
) -> Result<CrossValidationReport, CliError> {
    let mut sources: BTreeMap<String, String> = manifest_sources.cloned().unwrap_or_default();
    for r in rows {
        if let Some(s) = &r.source_id {
            sources.insert(r.stimulus_id.clone(), s.clone());
        }
    }
    let fold_of = |id: &str| sources.get(id).and_then(|s| plan.fold_of(s));

    let unplaced: Vec<&str> = rows
        .iter()
        .map(|r| r.stimulus_id.as_str())
        .chain(table.rows.keys().map(String::as_str))
        .filter(|id| fold_of(id).is_none())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unplaced.is_empty() {
        return Err(CliError::Invalid(format!(
            "{} stimuli have no source in the fold plan (pass --manifest or a source_id column): {:?}",
            unplaced.len(),
            unplaced
        )));
    }
    let mut preds = vec![BTreeMap::new(); plan.k];
    for r in rows {
        preds[fold_of(&r.stimulus_id).expect("placed above")].insert(r.stimulus_id.clone(), r.pred);
    }
    let mut members = vec![BTreeSet::new(); plan.k];
    for id in table.rows.keys() {
        members[fold_of(id).expect("placed above")].insert(id.clone());
    }
    Ok(evaluate_folds(&preds, &mos_map(table), &members, fitted)?)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<CrossValidationReport, CliError> {
    let pred = need(&args.pred, "pred")?;
    let mos = need(&args.mos, "mos")?;
    let folds = need(&args.folds, "folds")?;
    let mut inputs = vec![pred, mos, folds];
    inputs.extend(args.manifest.as_deref());
    check_inputs(&inputs)?;
    let rows = read_predictions(pred)?;
    let table = load_mos(mos)?;
    let plan = FoldPlan::load(folds)?;
    let manifest_sources = match &args.manifest {
        Some(m) => Some(load_manifest(m)?.source_map()),
        None => None,
    };
    let report = score(&rows, &table, &plan, manifest_sources.as_ref(), !args.no_fit)?;
    write_json(&args.out, &report)?;
    print_metrics("held-out metrics", &report);
    Ok(report)
}

fn service_config(path: Option<&Path>) -> Result<ServiceConfig, CliError> {
    Ok(match path {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    })
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let manifest = need(&args.manifest, "manifest")?;
    let data_dir = need(&args.data_dir, "data-dir")?;
    let mut inputs = vec![manifest];
    inputs.extend(args.service_config.as_deref());
    inputs.extend(args.media_root.as_deref());
    check_inputs(&inputs)?;
    let set = load_manifest(manifest)?;
    let mut cfg = service_config(args.service_config.as_deref())?;
    if let Some(root) = &args.media_root {
        cfg.media_root = Some(root.clone());
    }
    tracing::info!(config = %serde_json::to_string(&cfg).expect("serializes"), "service configuration");
    let service = StudyService::open(data_dir, &set, cfg, Arc::new(SystemClock))?;
    println!("sessions  {}", service.plan().len());
    let state = Arc::new(AppState::new(service));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io("tokio runtime".into(), e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .map_err(|e| CliError::Io(args.bind.clone(), e))?;
        let addr = listener.local_addr().map_err(|e| CliError::Io(args.bind.clone(), e))?;
        println!("listening on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::study::http::serve(listener, state, shutdown)
            .await
            .map_err(|e| CliError::Io(addr.to_string(), e))
    })
}

pub fn export(args: &ExportArgs) -> Result<(), CliError> {
    let manifest = need(&args.manifest, "manifest")?;
    let data_dir = need(&args.data_dir, "data-dir")?;
    let mut inputs = vec![manifest, data_dir];
    inputs.extend(args.service_config.as_deref());
    check_inputs(&inputs)?;
    let set = load_manifest(manifest)?;
    let service = StudyService::open_read_only(data_dir, &set, service_config(args.service_config.as_deref())?)?;
    let mut w = create(&args.out)?;
    service.export_ratings(&mut w)?;
    w.flush().map_err(io_err(&args.out))?;
    println!("ratings  {}", service.state().rating_count());
    println!("raters   {}", service.state().raters.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eSummary {
    pub seed: u64,
    pub stimuli: usize,
    pub sources: usize,
    pub k: usize,
    /// Backend set name -> held-out metrics.
    pub backend_sets: BTreeMap<String, CrossValidationReport>,
}

/// Synthetic manifest, simulated ratings, processing, folds, then extract,
/// train, infer and evaluate once per backend set. Writes every artifact
/// under `out` and returns the contents of `metrics.json`.
pub fn e2e(args: &E2eArgs) -> Result<E2eSummary, CliError> {
    if args.backend_sets.is_empty() {
        return Err(CliError::Usage("--backend-sets is empty".into()));
    }
    let out = &args.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let labels: Vec<String> = (1..=args.generators).map(|g| format!("G{g}")).collect();
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    let set = synthetic_manifest(args.sources, &labels, args.seed);
    set.write_manifest(&out.join("manifest.jsonl"))?;

    let study = simulate_study(
        &set,
        &StudyConfig {
            raters: args.raters,
            seed: args.seed,
            ..Default::default()
        },
    );
    let mut w = create(&out.join("ratings.csv"))?;
    write_ratings_csv(&mut w, &study.ratings)?;
    w.flush().map_err(io_err(out))?;

    let (table, report) = process_ratings(&study.ratings, &ProcessConfig::default())?;
    let mut w = create(&out.join("mos.csv"))?;
    table.write_csv(&mut w)?;
    w.flush().map_err(io_err(out))?;
    write_json(&out.join("report.json"), &report)?;

    let plan = make_folds(&set, args.k, args.seed)?;
    fs::write(out.join("folds.json"), plan.to_json() + "\n").map_err(io_err(out))?;

    let cfg = TrainConfig {
        epochs: args.epochs,
        seed: args.seed,
        ..Default::default()
    };
    let mos = mos_map(&table);
    let mut summary = E2eSummary {
        seed: args.seed,
        stimuli: set.len(),
        sources: set.source_ids().len(),
        k: args.k,
        backend_sets: BTreeMap::new(),
    };
    for name in &args.backend_sets {
        let dir: PathBuf = out.join(name);
        let options = BackendOptions {
            seed: args.seed,
            mos: Some(mos.clone()),
            ..Default::default()
        };
        let cache = run_extract(&set, name, &options, &dir.join("features"))?;
        let model = run_train(&cache, &table, &plan, &cfg, &dir.join("model"))?;
        let rows = run_infer(&model, &cache)?;
        write_predictions(&dir.join(PRED_FILE), &rows)?;
        let scored: Vec<PredictionRow> = rows.into_iter().filter(|r| table.rows.contains_key(&r.stimulus_id)).collect();
        let report = score(&scored, &table, &plan, None, true)?;
        print_metrics(&format!("{name}: held-out metrics"), &report);
        summary.backend_sets.insert(name.clone(), report);
    }
    write_json(&out.join("metrics.json"), &summary)?;
    Ok(summary)
}
