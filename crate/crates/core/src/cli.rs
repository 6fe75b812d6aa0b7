//! `longtail-lab` command-line front end.
//!
//! Output layout under `--out`:
//!
//! ```text
//! dataset/{train.csv,test.csv,dataset.json}          gen-data
//! runs/<loss>-seed<N>/checkpoint.json                train
//! runs/<loss>-seed<N>/{trace.csv,difficulty.csv}     train
//! runs/<loss>-seed<N>/{metrics.json,metrics.md}      train, eval
//! runs/<loss>-seed<N>/{predictions.csv,curves.csv}   eval
//! compare.{md,json}                                  compare
//! plots/*.svg                                        trace
//! ```
//!
//! Every file carries the hash of the configuration that produced it and the
//! seeds used. Output paths are not part of the hash, so identical configs
//! produce byte-identical files wherever they are written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{self, ConfuserPair, Dataset, LongTailSpec, Spread, Subset, SubsetPartition};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::metrics::{self, fmt_percent, MetricsReport};
use crate::model::{Checkpoint, CosineClassifier, ModelDims};
use crate::plot;
use crate::train::{self, TraceLog, TrainConfig};

pub const THREADS_ENV: &str = "LONGTAIL_LAB_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_MISSING: i32 = 4;

/// Where the dataset comes from: generated from a spec, or loaded from a `gen-data` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Spec(LongTailSpec),
    Path(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    #[serde(default)]
    pub hidden_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelOptions,
    pub train: TrainConfig,
    pub losses_to_compare: Vec<LossSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_repeats() -> usize {
    1
}

impl Default for ExperimentConfig {
    /// The reference desk-scale ablation: 20 classes in 16 dimensions, 500 down to 5
    /// training samples per class, two confuser pairs among the head classes and
    /// 50 balanced test samples per class, over 5 seeds.
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Spec(LongTailSpec {
                num_classes: 20,
                n_max: 500,
                n_min: 5,
                feature_dim: 16,
                intra_class_sigma: Spread::Uniform(0.25),
                confuser_pairs: vec![
                    ConfuserPair { a: 0, b: 1, angle: 0.5 },
                    ConfuserPair { a: 2, b: 3, angle: 0.5 },
                ],
                test_per_class: 50,
                seed: 0,
            }),
            model: ModelOptions::default(),
            train: TrainConfig {
                epochs: 20,
                batch_size: 64,
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 5e-4,
                loss: LossSpec::new(LossKind::Ala),
                seed: 0,
                lr_decay_epochs: vec![13],
                lr_decay_factor: 0.1,
                thresholds: data::ShotThresholds::default(),
            },
            losses_to_compare: [
                LossKind::Ce,
                LossKind::Ldam,
                LossKind::DfOnly,
                LossKind::QfOnly,
                LossKind::DfTimesLdam,
                LossKind::Ala,
            ]
            .into_iter()
            .map(LossSpec::new)
            .collect(),
            output_dir: default_output_dir(),
            repeats: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if let DatasetSource::Spec(spec) = &self.dataset {
            spec.validate()?;
        }
        self.train.loss.validate()?;
        self.losses_to_compare.iter().try_for_each(LossSpec::validate)
    }

    /// Applies `key.path=value` overrides. Values parse as JSON when possible, otherwise as strings.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut root = serde_json::to_value(&self).expect("config serializes");
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{ov}`")))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut root;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let last = i + 1 == parts.len();
                node = match node {
                    Value::Object(map) => {
                        if last {
                            map.insert(part.to_string(), value.clone());
                            break;
                        }
                        map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
                    }
                    Value::Array(items) => {
                        let idx: usize = part
                            .parse()
                            .map_err(|_| Error::Config(format!("`{part}` in `{key}` is not an index")))?;
                        let slot = items
                            .get_mut(idx)
                            .ok_or_else(|| Error::Config(format!("index {idx} out of range in `{key}`")))?;
                        if last {
                            *slot = value.clone();
                            break;
                        }
                        slot
                    }
                    _ => return Err(Error::Config(format!("`{key}` does not name a config field"))),
                };
            }
        }
        serde_json::from_value(root).map_err(|e| Error::Config(format!("after --set: {e}")))
    }

    /// Hash of everything that influences results; `output_dir` is excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
        }
        short_hash(v.to_string().as_bytes())
    }
}

fn hex_prefix(digest: &[u8]) -> String {
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn short_hash(bytes: &[u8]) -> String {
    hex_prefix(&Sha256::digest(bytes))
}

/// Content hash of a train/test pair.
pub fn dataset_hash(train: &Dataset, test: &Dataset) -> String {
    let mut h = Sha256::new();
    for ds in [train, test] {
        h.update((ds.feature_dim() as u64).to_le_bytes());
        for v in ds.features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &l in &ds.labels {
            h.update((l as u64).to_le_bytes());
        }
    }
    hex_prefix(&h.finalize())
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset_hash: String,
    pub model: ModelOptions,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn hash(&self) -> String {
        short_hash(serde_json::to_string(self).expect("run config serializes").as_bytes())
    }

    pub fn id(&self) -> String {
        run_id(self.train.loss.kind, self.train.seed)
    }
}

pub fn run_id(kind: LossKind, seed: u64) -> String {
    format!("{}-seed{seed}", kind.as_str())
}

/// Header written into every run artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub run_id: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub loss: LossSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    #[serde(flatten)]
    pub header: RunHeader,
    pub metrics: MetricsReport,
}

pub struct RunOutcome {
    pub config: RunConfig,
    pub model: CosineClassifier,
    pub trace: TraceLog,
    pub predictions: Vec<train::Prediction>,
    pub metrics: MetricsReport,
}

/// A loaded dataset plus everything needed to train and score runs on it.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train_set: Dataset,
    pub test_set: Dataset,
    pub partition: SubsetPartition,
    pub dataset_hash: String,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train_set, test_set) = match &config.dataset {
            DatasetSource::Spec(spec) => data::generate(spec)?,
            DatasetSource::Path(dir) => {
                let (tr, te, _) = data::load_dataset(dir)?;
                (tr, te)
            }
        };
        let partition = data::partition_by_count(&train_set.counts, config.train.thresholds);
        let dataset_hash = dataset_hash(&train_set, &test_set);
        Ok(Self {
            config,
            train_set,
            test_set,
            partition,
            dataset_hash,
        })
    }

    pub fn run_config(&self, loss: LossSpec, seed: u64) -> RunConfig {
        RunConfig {
            dataset_hash: self.dataset_hash.clone(),
            model: self.config.model.clone(),
            train: TrainConfig {
                loss,
                seed,
                ..self.config.train.clone()
            },
        }
    }

    /// Trains and evaluates one run. The model is initialized from the run seed.
    pub fn run(&self, loss: LossSpec, seed: u64) -> Result<RunOutcome> {
        let config = self.run_config(loss, seed);
        let dims = ModelDims {
            input_dim: self.train_set.feature_dim(),
            hidden_dim: config.model.hidden_dim,
            num_classes: self.train_set.num_classes(),
        };
        let init = CosineClassifier::init(dims, seed)?;
        let (model, trace) = train::train(&self.train_set, init, &config.train)?;
        let predictions = train::evaluate(&model, &self.test_set, &config.train.loss)?;
        let metrics = metrics::report_predictions(&predictions, &self.partition, dims.num_classes)?;
        Ok(RunOutcome {
            config,
            model,
            trace,
            predictions,
            metrics,
        })
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.config.repeats as u64).map(|r| self.config.train.seed + r)
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.config.output_dir.join("runs").join(id)
    }

    fn header(&self, run: &RunConfig) -> RunHeader {
        RunHeader {
            run_id: run.id(),
            config_hash: run.hash(),
            dataset_hash: self.dataset_hash.clone(),
            loss: run.train.loss,
            seed: run.train.seed,
        }
    }

    pub fn write_run(&self, outcome: &RunOutcome) -> Result<PathBuf> {
        let header = self.header(&outcome.config);
        let dir = self.run_dir(&header.run_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let comment = format!(
            "run_id={} config_hash={} dataset_hash={} seed={}",
            header.run_id, header.config_hash, header.dataset_hash, header.seed
        );
        outcome
            .model
            .to_checkpoint(&header.config_hash)
            .save(&dir.join("checkpoint.json"))?;
        outcome.trace.save(&dir.join("trace.csv"), &comment)?;
        write_file(&dir.join("difficulty.csv"), &outcome.trace.difficulty_csv(&comment))?;
        self.write_metrics(&dir, header, outcome.metrics.clone())?;
        Ok(dir)
    }

    fn write_metrics(&self, dir: &Path, header: RunHeader, metrics: MetricsReport) -> Result<()> {
        let md = format!(
            "<!-- {} config_hash={} seed={} -->\n{}",
            header.run_id,
            header.config_hash,
            header.seed,
            metrics.to_markdown(header.loss.kind.label())
        );
        let record = RunMetrics { header, metrics };
        write_json(&dir.join("metrics.json"), &record)?;
        write_file(&dir.join("metrics.md"), &md)
    }

    pub fn read_metrics(&self, id: &str) -> Result<RunMetrics> {
        let path = self.run_dir(id).join("metrics.json");
        if !path.exists() {
            return Err(Error::MissingArtifact { id: id.to_string(), path });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_file(path, &(json + "\n"))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every `(loss, seed)` pair in parallel and returns outcomes in input order.
fn run_all(exp: &Experiment, jobs: &[(LossSpec, u64)]) -> Result<Vec<PathBuf>> {
    let pool = thread_pool()?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(loss, seed)| {
                let outcome = exp.run(loss, seed).map_err(|e| Error::Run {
                    id: run_id(loss.kind, seed),
                    source: Box::new(e),
                })?;
                exp.write_run(&outcome)
            })
            .collect()
    })
}

/// Per-loss mean and sample standard deviation over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub loss: LossSpec,
    pub label: String,
    pub runs: Vec<String>,
    /// Many, medium, few, all.
    pub mean: [Option<f64>; 4],
    pub std: [Option<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub config_hash: String,
    pub dataset_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl CompareTable {
    pub fn from_runs(config_hash: String, dataset_hash: String, seeds: Vec<u64>, groups: Vec<(LossSpec, Vec<RunMetrics>)>) -> Self {
        let rows = groups
            .into_iter()
            .map(|(loss, runs)| {
                let mut mean = [None; 4];
                let mut std = [None; 4];
                for k in 0..4 {
                    let vals: Option<Vec<f64>> = runs.iter().map(|r| r.metrics.accuracies()[k]).collect();
                    if let Some(vals) = vals.filter(|v| !v.is_empty()) {
                        let (m, s) = mean_std(&vals);
                        mean[k] = Some(m);
                        std[k] = Some(s);
                    }
                }
                CompareRow {
                    loss,
                    label: loss.kind.label().to_string(),
                    runs: runs.iter().map(|r| r.header.run_id.clone()).collect(),
                    mean,
                    std,
                }
            })
            .collect();
        Self {
            config_hash,
            dataset_hash,
            seeds,
            rows,
        }
    }

    pub fn row(&self, kind: LossKind) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.loss.kind == kind)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "<!-- config_hash={} dataset_hash={} seeds={:?} -->\n| Method | Many | Medium | Few | All |\n|---|---|---|---|---|\n",
            self.config_hash, self.dataset_hash, self.seeds
        );
        for row in &self.rows {
            let cells: Vec<String> = (0..4)
                .map(|k| match (row.mean[k], row.std[k]) {
                    (Some(m), Some(s)) => format!("{} ± {:.1}", fmt_percent(Some(m)), 100.0 * s),
                    _ => "n/a".to_string(),
                })
                .collect();
            let _ = writeln!(out, "| {} | {} |", row.label, cells.join(" | "));
        }
        out
    }
}

#[derive(Debug, Parser)]
#[command(name = "longtail-lab", version, about = "Long-tailed classification loss experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON experiment configuration; defaults to the built-in reference ablation.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Base seed (dataset seed for gen-data, training seed otherwise).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Loss for train/eval/trace: ce | qf | df | ldam | df-ldam | ala | focal.
    #[arg(long, global = true)]
    pub loss: Option<LossKind>,

    /// Logit scale s for every loss.
    #[arg(long, global = true)]
    pub scale: Option<f64>,

    /// Number of seeds per loss, starting at the training seed.
    #[arg(long, global = true)]
    pub repeats: Option<usize>,

    /// Output directory for datasets, runs and tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Override a config field, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and write CSV + JSON sidecar.
    GenData,
    /// Train one run per repeat and write checkpoints, traces and metrics.
    Train,
    /// Re-evaluate trained checkpoints on the balanced test split.
    Eval,
    /// Assemble the ablation table over `losses_to_compare`.
    Compare {
        /// Train runs that are missing instead of failing.
        #[arg(long)]
        train_missing: bool,
    },
    /// Render trace and probability-curve SVG charts for trained runs.
    Trace,
}

impl Cli {
    /// Resolves the experiment configuration from `--config`, the flag overrides and `--set`.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg = cfg.with_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            match (&self.command, &mut cfg.dataset) {
                (Command::GenData, DatasetSource::Spec(spec)) => spec.seed = seed,
                _ => cfg.train.seed = seed,
            }
        }
        if let Some(kind) = self.loss {
            cfg.train.loss.kind = kind;
        }
        if let Some(s) = self.scale {
            cfg.train.loss.scale_s = s;
            cfg.losses_to_compare.iter_mut().for_each(|l| l.scale_s = s);
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidSpec(_)
        | Error::InvalidCounts(_)
        | Error::NumericInput(_)
        | Error::Domain { .. }
        | Error::Config(_)
        | Error::Json { .. }
        | Error::Format { .. } => EXIT_CONFIG,
        Error::Divergence { .. } | Error::DegenerateNorm(_) => EXIT_DIVERGENCE,
        Error::MissingArtifact { .. } => EXIT_MISSING,
        Error::Io { .. } | Error::Csv { .. } => EXIT_FAILURE,
        Error::Run { source, .. } => exit_code(source),
    }
}

/// Parses `args` (including the program name), runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.experiment_config()?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train => cmd_train(&cfg).map(|_| ()),
        Command::Eval => cmd_eval(&cfg),
        Command::Compare { train_missing } => cmd_compare(&cfg, *train_missing).map(|_| ()),
        Command::Trace => cmd_trace(&cfg),
    }
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let DatasetSource::Spec(spec) = &cfg.dataset else {
        return Err(Error::Config("gen-data needs an inline dataset spec, not a path".into()));
    };
    let (train_set, test_set) = data::generate(spec)?;
    let dir = cfg.output_dir.join("dataset");
    let hash = short_hash(
        serde_json::to_string(&(spec, cfg.train.thresholds))
            .expect("spec serializes")
            .as_bytes(),
    );
    let side = data::save_dataset(&dir, spec, &train_set, &test_set, cfg.train.thresholds, &hash)?;
    println!(
        "wrote {}: C={} d={} counts {}..{} train={} test={} many={} medium={} few={} hash={}",
        dir.display(),
        side.num_classes,
        side.feature_dim,
        side.counts.iter().max().copied().unwrap_or(0),
        side.counts.iter().min().copied().unwrap_or(0),
        train_set.len(),
        test_set.len(),
        side.partition.many.len(),
        side.partition.medium.len(),
        side.partition.few.len(),
        hash
    );
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let exp = Experiment::prepare(cfg.clone())?;
    let jobs: Vec<(LossSpec, u64)> = exp.seeds().map(|s| (cfg.train.loss, s)).collect();
    let dirs = run_all(&exp, &jobs)?;
    for d in &dirs {
        println!("wrote {}", d.display());
    }
    Ok(dirs)
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let exp = Experiment::prepare(cfg.clone())?;
    for seed in exp.seeds() {
        let run = exp.run_config(cfg.train.loss, seed);
        let dir = exp.run_dir(&run.id());
        let ckpt = Checkpoint::load(&dir.join("checkpoint.json")).map_err(|e| match e {
            Error::MissingArtifact { path, .. } => Error::MissingArtifact { id: run.id(), path },
            other => other,
        })?;
        let model = CosineClassifier::from_checkpoint(&ckpt)?;
        let predictions = train::evaluate(&model, &exp.test_set, &run.train.loss)?;
        let report = metrics::report_predictions(&predictions, &exp.partition, exp.train_set.num_classes())?;
        let header = exp.header(&run);

        let mut pred_csv = format!("# run_id={} config_hash={} seed={}\nindex,label,predicted,target_probability\n", header.run_id, header.config_hash, seed);
        for p in &predictions {
            let _ = writeln!(pred_csv, "{},{},{},{}", p.index, p.label, p.predicted, p.target_probability);
        }
        write_file(&dir.join("predictions.csv"), &pred_csv)?;

        let mut curves = format!("# run_id={} config_hash={} seed={}\nsubset,rank,probability\n", header.run_id, header.config_hash, seed);
        for s in Subset::ALL {
            for (rank, p) in report.subset(s).probability_curve.iter().enumerate() {
                let _ = writeln!(curves, "{},{rank},{p}", s.name());
            }
        }
        write_file(&dir.join("curves.csv"), &curves)?;
        println!(
            "{}: many {} medium {} few {} all {}",
            header.run_id,
            fmt_percent(report.many.accuracy),
            fmt_percent(report.medium.accuracy),
            fmt_percent(report.few.accuracy),
            fmt_percent(report.all.accuracy)
        );
        exp.write_metrics(&dir, header, report)?;
    }
    Ok(())
}

pub fn cmd_compare(cfg: &ExperimentConfig, train_missing: bool) -> Result<CompareTable> {
    if cfg.losses_to_compare.is_empty() {
        return Err(Error::Config("losses_to_compare is empty".into()));
    }
    let exp = Experiment::prepare(cfg.clone())?;
    let seeds: Vec<u64> = exp.seeds().collect();
    let jobs: Vec<(LossSpec, u64)> = cfg
        .losses_to_compare
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();

    let is_current = |loss: LossSpec, seed: u64| {
        let run = exp.run_config(loss, seed);
        exp.read_metrics(&run.id())
            .map(|m| m.header.config_hash == run.hash())
            .unwrap_or(false)
    };
    let missing: Vec<(LossSpec, u64)> = jobs.iter().copied().filter(|&(l, s)| !is_current(l, s)).collect();
    if !missing.is_empty() {
        if !train_missing {
            let (l, s) = missing[0];
            let id = run_id(l.kind, s);
            return Err(Error::MissingArtifact {
                path: exp.run_dir(&id).join("metrics.json"),
                id: format!(
                    "{id} ({} of {} runs missing or stale: {})",
                    missing.len(),
                    jobs.len(),
                    missing.iter().map(|&(l, s)| run_id(l.kind, s)).collect::<Vec<_>>().join(", ")
                ),
            });
        }
        run_all(&exp, &missing)?;
    }

    let mut groups = Vec::new();
    for &loss in &cfg.losses_to_compare {
        let runs = seeds
            .iter()
            .map(|&s| exp.read_metrics(&exp.run_config(loss, s).id()))
            .collect::<Result<Vec<_>>>()?;
        groups.push((loss, runs));
    }
    let table = CompareTable::from_runs(cfg.hash(), exp.dataset_hash.clone(), seeds, groups);
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let md = table.to_markdown();
    write_file(&cfg.output_dir.join("compare.md"), &md)?;
    write_json(&cfg.output_dir.join("compare.json"), &table)?;
    print!("{md}");
    Ok(table)
}

pub fn cmd_trace(cfg: &ExperimentConfig) -> Result<()> {
    let exp = Experiment::prepare(cfg.clone())?;
    let plots = cfg.output_dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    for seed in exp.seeds() {
        let id = exp.run_config(cfg.train.loss, seed).id();
        let dir = exp.run_dir(&id);
        let trace_path = dir.join("trace.csv");
        if !trace_path.exists() {
            return Err(Error::MissingArtifact { id, path: trace_path });
        }
        let trace = TraceLog::from_csv(&trace_path)?;
        let series: Vec<plot::Series> = Subset::ALL
            .iter()
            .map(|&s| plot::Series {
                name: s.name().to_string(),
                points: trace
                    .epochs
                    .iter()
                    .filter_map(|e| train::subset_adjust(e, s).map(|v| (e.epoch as f64, v)))
                    .collect(),
            })
            .collect();
        let svg = plot::line_chart(&format!("{id}: mean adjusting term"), "epoch", "A", &series);
        write_file(&plots.join(format!("{id}-adjust.svg")), &svg)?;

        let loss_series = [plot::Series {
            name: "loss".into(),
            points: trace.epochs.iter().map(|e| (e.epoch as f64, e.loss)).collect(),
        }];
        let svg = plot::line_chart(&format!("{id}: training loss"), "epoch", "loss", &loss_series);
        write_file(&plots.join(format!("{id}-loss.svg")), &svg)?;

        let metrics = exp.read_metrics(&id)?;
        let curves: Vec<plot::Series> = Subset::ALL
            .iter()
            .map(|&s| plot::Series {
                name: s.name().to_string(),
                points: metrics
                    .metrics
                    .subset(s)
                    .probability_curve
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (i as f64, p))
                    .collect(),
            })
            .collect();
        let svg = plot::line_chart(&format!("{id}: target probability (sorted)"), "sample", "p", &curves);
        write_file(&plots.join(format!("{id}-probability.svg")), &svg)?;
        println!("wrote plots for {id}");
    }
    Ok(())
}
