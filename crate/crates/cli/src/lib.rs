//! Command-line front end. `main.rs` only parses arguments and maps the
//! result of [`run`] to an exit code.

pub mod config;
pub mod scan;
pub mod split;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use npdscan::checkpoint::{save_checkpoint, Checkpoint, CheckpointManifest, LoadedModel, TrainingProvenance, WEIGHTS_FILE};
use npdscan::dataset::{
    balance, load_dataset, train_test_split, write_csv, DatasetFormat, DatasetManifest, LabeledDataset, SplitSummary,
    MANIFEST_SCHEMA_VERSION,
};
use npdscan::encoder::PoolingMode;
use npdscan::error::{NnError, TrainError};
use npdscan::synth::synthetic_corpus;
use npdscan::train_eval::{
    cross_validate, direct_protocol, evaluate, tokenize_dataset, train, EpochStats, MetricsReport,
    REPORT_SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::scan::CheckpointInfo;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const DATA_MANIFEST_FILE: &str = "manifest.json";
pub const NAN_SNAPSHOT_DIR: &str = "nan-snapshot";

#[derive(Debug, Parser)]
#[command(name = "npdscan", version, about = "Detect NULL pointer dereferences (CWE-476) in C/C++ functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a labeled corpus, balance the training side and write splits.
    Ingest(IngestArgs),
    /// Write a generated corpus in the layout `ingest` produces.
    Synth(SynthArgs),
    /// Train a model; writes one checkpoint per epoch plus `final`.
    Train(TrainArgs),
    /// Score a checkpoint on labeled data.
    Evaluate(EvaluateArgs),
    /// k-fold cross-validation over a training split.
    Crossval(CrossvalArgs),
    /// Split source files into functions and classify each one.
    Scan(ScanArgs),
    /// Print a checkpoint manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Json,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Training corpus (.h5/.hdf5 or .csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Separate test corpus; otherwise a seeded fraction of --data is held out.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2, conflicts_with = "test")]
    pub test_fraction: f64,
    #[arg(long, default_value = "CWE-476")]
    pub cwe: String,
    /// Input format; inferred from the extension when absent.
    #[arg(long)]
    pub input_format: Option<DatasetFormat>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the training split's class ratio as loaded.
    #[arg(long)]
    pub no_balance: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `ingest` or `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's pooling.
    #[arg(long, value_parser = parse_pooling)]
    pub pooling: Option<PoolingMode>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A corpus file, or an `ingest` directory (its test split is used).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "CWE-476")]
    pub cwe: String,
    #[arg(long)]
    pub input_format: Option<DatasetFormat>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A corpus file, or an `ingest` directory (its training split is used).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "CWE-476")]
    pub cwe: String,
    #[arg(long)]
    pub input_format: Option<DatasetFormat>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_pooling)]
    pub pooling: Option<PoolingMode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Source files or directories.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Minimum confidence for a vulnerable verdict to count as a finding.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

fn parse_pooling(s: &str) -> std::result::Result<PoolingMode, String> {
    s.parse().map_err(|e: npdscan::error::ModelError| e.to_string())
}

/// UTC, second resolution.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = to_json(value)?;
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Exit code for a failed command: numerical failures get their own code,
/// everything else is a usage or input error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<TrainError>().is_some_and(TrainError::is_numerical)
            || e.downcast_ref::<NnError>().is_some_and(|n| matches!(n, NnError::NonFiniteGradient { .. }))
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Runs one command and returns its exit code on success.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a).map(|_| EXIT_OK),
        Command::Synth(a) => cmd_synth(&a).map(|_| EXIT_OK),
        Command::Train(a) => cmd_train(&a).map(|_| EXIT_OK),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| EXIT_OK),
        Command::Crossval(a) => cmd_crossval(&a).map(|_| EXIT_OK),
        Command::Scan(a) => cmd_scan(&a).map(|r| if r.has_findings() { EXIT_FINDINGS } else { EXIT_OK }),
        Command::Inspect(a) => cmd_inspect(&a).map(|_| EXIT_OK),
    }
}

fn load(path: &Path, cwe: &str, format: Option<DatasetFormat>) -> Result<LabeledDataset> {
    let format = match format.or_else(|| DatasetFormat::from_path(path)) {
        Some(f) => f,
        None => bail!("cannot tell the format of {}; pass --input-format", path.display()),
    };
    load_dataset(path, cwe, format).with_context(|| format!("loading {}", path.display()))
}

fn write_splits(out: &Path, train: &LabeledDataset, test: &LabeledDataset, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_csv(train, &out.join(TRAIN_FILE))?;
    write_csv(test, &out.join(TEST_FILE))?;
    manifest.write(&out.join(DATA_MANIFEST_FILE))?;
    Ok(())
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<DatasetManifest> {
    let full = load(&a.data, &a.cwe, a.input_format)?;
    let mut sources = vec![full.provenance.clone()];
    let (train_raw, test) = match &a.test {
        Some(path) => {
            let test = load(path, &a.cwe, a.input_format)?;
            sources.push(test.provenance.clone());
            (full, test)
        }
        None => train_test_split(&full, a.test_fraction, a.seed)?,
    };
    let train = if a.no_balance {
        train_raw
    } else {
        balance(&train_raw, a.seed)?
    };
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: a.seed,
        cwe: a.cwe.clone(),
        balanced: !a.no_balance,
        sources,
        train: SplitSummary::of(TRAIN_FILE, &train),
        test: SplitSummary::of(TEST_FILE, &test),
        total_samples: train.len() + test.len(),
    };
    write_splits(&a.out, &train, &test, &manifest)?;
    emit(&manifest, None)?;
    Ok(manifest)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<DatasetManifest> {
    let full = synthetic_corpus(a.samples, a.seed);
    let (train, test) = train_test_split(&full, a.test_fraction, a.seed)?;
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: a.seed,
        cwe: full.provenance.cwe.clone(),
        balanced: false,
        sources: vec![full.provenance.clone()],
        train: SplitSummary::of(TRAIN_FILE, &train),
        test: SplitSummary::of(TEST_FILE, &test),
        total_samples: full.len(),
    };
    write_splits(&a.out, &train, &test, &manifest)?;
    emit(&manifest, None)?;
    Ok(manifest)
}

fn run_config(path: Option<&Path>, seed: Option<u64>, pooling: Option<PoolingMode>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = pooling {
        cfg.pooling = p;
    }
    cfg.check()?;
    Ok(cfg)
}

/// Per-epoch line of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub schema_version: u32,
    #[serde(flatten)]
    pub stats: EpochStats,
}

pub fn epoch_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("epoch-{epoch}"))
}

pub fn cmd_train(a: &TrainArgs) -> Result<npdscan::train_eval::DirectReport> {
    let cfg = run_config(a.config.as_deref(), a.seed, a.pooling)?;
    let tokenizer = cfg.tokenizer()?;
    let max_length = cfg.max_length();
    let train_ds = load(&a.data.join(TRAIN_FILE), "CWE-476", Some(DatasetFormat::Csv))?;
    let test_path = a.data.join(TEST_FILE);
    let test_ds = if test_path.exists() {
        Some(load(&test_path, "CWE-476", Some(DatasetFormat::Csv))?)
    } else {
        None
    };
    let manifest_path = a.data.join(DATA_MANIFEST_FILE);
    let dataset_hash = if manifest_path.exists() {
        Some(sha256_file(&manifest_path)?)
    } else {
        None
    };
    let train_set = tokenize_dataset(&train_ds, &tokenizer, max_length);
    let test_set = test_ds.map(|d| tokenize_dataset(&d, &tokenizer, max_length));

    let mut model = cfg.build_model(cfg.seed)?;
    let spec = model.spec();
    let tcfg = cfg.train_config();
    let provenance = |epoch| TrainingProvenance {
        seed: cfg.seed,
        epoch,
        dataset_manifest_sha256: dataset_hash.clone(),
        train_config: Some(tcfg.clone()),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;

    let on_epoch = |stats: &EpochStats, m: &LoadedModel| -> std::result::Result<(), TrainError> {
        let dir = epoch_dir(&a.out, stats.epoch);
        let write = || -> Result<()> {
            save_checkpoint(&dir, m, spec.clone(), &tokenizer, max_length, provenance(Some(stats.epoch)))?;
            let line = EpochMetrics {
                schema_version: REPORT_SCHEMA_VERSION,
                stats: stats.clone(),
            };
            fs::write(dir.join("metrics.json"), to_json(&line)?)?;
            Ok(())
        };
        write().map_err(|e| TrainError::Callback(e.into()))
    };
    let result = match &test_set {
        Some(test) => direct_protocol(&mut model, &train_set, test, &tcfg, on_epoch),
        None => train(&mut model, &train_set, None, &tcfg, on_epoch).map(|steps| npdscan::train_eval::DirectReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: tcfg.seed,
            steps,
        }),
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            if e.is_numerical() {
                let dir = a.out.join(NAN_SNAPSHOT_DIR);
                save_checkpoint(&dir, &model, spec, &tokenizer, max_length, provenance(None))?;
                let detail = serde_json::json!({ "error": e.to_string(), "detail": format!("{e:?}") });
                fs::write(dir.join("error.json"), to_json(&detail)?)?;
                log::error!("numerical failure; model state saved to {}", dir.display());
            }
            return Err(e.into());
        }
    };
    save_checkpoint(
        &a.out.join("final"),
        &model,
        spec,
        &tokenizer,
        max_length,
        provenance(Some(tcfg.epochs)),
    )?;
    fs::write(a.out.join("metrics.json"), to_json(&report)?)?;
    emit(&report, None)?;
    Ok(report)
}

/// Evaluation output with the identifiers needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub checkpoint: String,
    pub weights_sha256: String,
    pub data: String,
    pub samples: usize,
    pub metrics: MetricsReport,
}

fn data_file(data: &Path, split: &str) -> PathBuf {
    if data.is_dir() {
        data.join(split)
    } else {
        data.to_path_buf()
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<EvaluationReport> {
    let (ck, _) = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let path = data_file(&a.data, TEST_FILE);
    let ds = load(&path, &a.cwe, a.input_format)?;
    let data = tokenize_dataset(&ds, &ck.tokenizer, ck.max_length);
    let metrics = evaluate(&ck.model, &data, false)?;
    let report = EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        checkpoint: a.checkpoint.display().to_string(),
        weights_sha256: sha256_file(&a.checkpoint.join(WEIGHTS_FILE))?,
        data: path.display().to_string(),
        samples: ds.len(),
        metrics,
    };
    emit(&report, a.out.as_deref())?;
    Ok(report)
}

pub fn cmd_crossval(a: &CrossvalArgs) -> Result<npdscan::train_eval::CvReport> {
    let cfg = run_config(a.config.as_deref(), a.seed, a.pooling)?;
    let tokenizer = cfg.tokenizer()?;
    let ds = load(&data_file(&a.data, TRAIN_FILE), &a.cwe, a.input_format)?;
    let data = tokenize_dataset(&ds, &tokenizer, cfg.max_length());
    let factory = |fold: usize| {
        cfg.build_model(cfg.seed.wrapping_add(fold as u64))
            .map_err(|e| TrainError::Callback(e.into()))
    };
    let report = cross_validate(factory, &data, a.k, &cfg.train_config())?;
    emit(&report, a.out.as_deref())?;
    Ok(report)
}

pub fn checkpoint_info(dir: &Path, manifest: &CheckpointManifest) -> Result<CheckpointInfo> {
    Ok(CheckpointInfo {
        path: dir.display().to_string(),
        weights_sha256: sha256_file(&dir.join(WEIGHTS_FILE))?,
        model: match manifest.model {
            npdscan::checkpoint::ModelSpec::Transformer { .. } => "transformer".into(),
            npdscan::checkpoint::ModelSpec::Lstm { .. } => "lstm".into(),
        },
        epoch: manifest.provenance.epoch,
    })
}

pub fn cmd_scan(a: &ScanArgs) -> Result<scan::ScanReport> {
    if !(0.0..=1.0).contains(&a.threshold) {
        bail!("threshold {} outside [0, 1]", a.threshold);
    }
    let (ck, manifest) = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let files = scan::collect_sources(&a.paths)?;
    let report = scan::scan(&files, &ck, a.threshold, checkpoint_info(&a.checkpoint, &manifest)?)?;
    emit(&report, a.out.as_deref())?;
    Ok(report)
}

pub fn cmd_inspect(a: &InspectArgs) -> Result<CheckpointManifest> {
    let manifest = CheckpointManifest::read(&a.checkpoint)?;
    emit(&manifest, None)?;
    Ok(manifest)
}
