//! Implementations of the command-line subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use screengraph::bench::{run_bench, standard_suite, BenchError, BenchReport, BenchSuite};
use screengraph::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderError};
use screengraph::graph::{DetectionManifest, TypeVocabulary};
use screengraph::index::{load_index as read_index, save_index as write_index, HybridIndex, IndexError, MemoryReport};
use screengraph::learning::{embedding_spread, train_with, AdamW, SpreadReport, TrainError};
use screengraph::pipeline::{ingest_dir, new_index, read_manifest_dir, training_samples, IngestReport, PipelineError};
use screengraph::query::{Engine, QueryError, QueryResponse, Strategy};
use screengraph::synth::{generate_corpus, SynthConfig};
use screengraph::Encoder;

use crate::config::{AppConfig, ConfigError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{0}")]
    Usage(String),
}

fn file_err(path: &Path, e: impl ToString) -> CliError {
    CliError::File { path: path.display().to_string(), message: e.to_string() }
}

pub fn load_model(cfg: &AppConfig) -> Result<Encoder, CliError> {
    if !cfg.model_path.exists() {
        return Err(file_err(&cfg.model_path, "model checkpoint not found; run `screengraph train` first"));
    }
    Ok(load_checkpoint::<f32>(&cfg.model_path)?.0)
}

pub fn open_index(cfg: &AppConfig, path: Option<&Path>) -> Result<HybridIndex, CliError> {
    let path = path.unwrap_or(&cfg.index_path);
    if !path.exists() {
        return Err(file_err(path, "index not found; run `screengraph ingest` first"));
    }
    Ok(read_index(path)?)
}

/// Writes a synthetic corpus as one JSON manifest per file.
pub fn generate(out: &Path, per_template: usize, seed: u64, visual: bool) -> Result<usize, CliError> {
    std::fs::create_dir_all(out).map_err(|e| file_err(out, e))?;
    let corpus = generate_corpus(per_template, SynthConfig { seed, visual });
    for m in &corpus {
        let path = out.join(format!("{}.json", m.screen_id));
        std::fs::write(&path, m.to_json_pretty()).map_err(|e| file_err(&path, e))?;
    }
    Ok(corpus.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub manifests: usize,
    pub samples: usize,
    pub skipped: usize,
    pub parameters: usize,
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

fn load_corpus(dir: &Path) -> Result<(Vec<DetectionManifest>, usize), CliError> {
    let loaded = read_manifest_dir(dir)?;
    let total = loaded.len();
    let ok: Vec<_> = loaded.into_iter().filter_map(|(_, m)| m.ok()).collect();
    let skipped = total - ok.len();
    Ok((ok, skipped))
}

/// Trains on the manifests in `corpus` (default: the configured data
/// directory) and writes the checkpoint plus a line-delimited epoch log.
pub fn train(cfg: &AppConfig, corpus: Option<&Path>, resume: bool) -> Result<TrainSummary, CliError> {
    let dir = corpus.unwrap_or(&cfg.data_dir);
    let (manifests, unreadable) = load_corpus(dir)?;
    let (model, optimizer) = if resume {
        let (model, snap) = load_checkpoint::<f32>(&cfg.model_path)?;
        let snap = snap.ok_or_else(|| file_err(&cfg.model_path, "checkpoint has no optimizer state to resume from"))?;
        let opt = AdamW::restore(cfg.train.adamw(), &model.config, &snap).map_err(|e| file_err(&cfg.model_path, e))?;
        (model, Some(opt))
    } else {
        let vocab = TypeVocabulary::from_corpus(&manifests);
        let ecfg = EncoderConfig { num_intents: cfg.intents.len(), seed: cfg.train.seed, ..EncoderConfig::default() };
        (Encoder::init(ecfg, vocab, cfg.intents.clone())?, None)
    };
    let samples = training_samples(&manifests, &model.vocab, &model.intent_labels);
    if let Some(parent) = cfg.model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| file_err(parent, e))?;
    }
    let log_path = PathBuf::from(format!("{}.log.jsonl", cfg.model_path.display()));
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(resume)
        .write(true)
        .truncate(!resume)
        .open(&log_path)
        .map_err(|e| file_err(&log_path, e))?;
    let mut write_err = None;
    let outcome = train_with(model, &samples, &cfg.train, optimizer, |e| {
        tracing::info!(epoch = e.epoch, loss = e.loss, seconds = e.seconds, "epoch done");
        if let Err(err) = writeln!(log, "{}", serde_json::to_string(e).expect("log serializes")) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(file_err(&log_path, e));
    }
    save_checkpoint(&outcome.model, Some(&outcome.optimizer.snapshot()), &cfg.model_path)?;
    Ok(TrainSummary {
        manifests: manifests.len(),
        samples: samples.len(),
        skipped: unreadable + manifests.len() - samples.len(),
        parameters: outcome.model.core_parameter_count(),
        epochs_run: outcome.log.len(),
        final_loss: outcome.log.last().map(|l| l.loss),
        checkpoint: cfg.model_path.clone(),
        log: log_path,
    })
}

/// Adds a directory of manifests to the configured index, creating it if
/// needed, and saves the result.
pub fn ingest(cfg: &AppConfig, dir: Option<&Path>) -> Result<IngestReport, CliError> {
    let model = load_model(cfg)?;
    let embedder = cfg.build_embedder()?;
    let mut index = if cfg.index_path.exists() { read_index(&cfg.index_path)? } else { new_index(&model, cfg.metric) };
    let dir = dir.unwrap_or(&cfg.data_dir);
    let report = ingest_dir(&model, &embedder, &mut index, dir)?;
    if let Some(parent) = cfg.index_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| file_err(parent, e))?;
    }
    if index.len() >= cfg.ann.build_min_rows.max(1) {
        index.build_ann(cfg.ann.seed)?;
    }
    write_index(&index, &cfg.index_path)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadOutput {
    pub report: SpreadReport,
    pub files: Vec<PathBuf>,
}

/// Pairwise cosine spread of the indexed structural embeddings, written as
/// JSON, CSV and SVG into `out`.
pub fn eval_spread(cfg: &AppConfig, out: &Path, seed: u64) -> Result<SpreadOutput, CliError> {
    let index = open_index(cfg, None)?;
    if index.len() < 2 {
        return Err(CliError::Usage(format!("spread needs at least 2 indexed screens, found {}", index.len())));
    }
    let report = embedding_spread(&index.structural_rows(), seed);
    std::fs::create_dir_all(out).map_err(|e| file_err(out, e))?;
    let files = vec![out.join("spread.json"), out.join("spread.csv"), out.join("spread.svg")];
    let bodies = [serde_json::to_string_pretty(&report).expect("report serializes"), report.to_csv(), report.to_svg()];
    for (path, body) in files.iter().zip(bodies) {
        std::fs::write(path, body).map_err(|e| file_err(path, e))?;
    }
    Ok(SpreadOutput { report, files })
}

/// Runs a query suite from `suite`, or a generated one with `standard`
/// queries per kind.
pub fn bench(cfg: &AppConfig, suite: Option<&Path>, standard: usize, seed: u64) -> Result<BenchReport, CliError> {
    let index = open_index(cfg, None)?;
    let model = if cfg.model_path.exists() { Some(load_model(cfg)?) } else { None };
    let embedder = cfg.build_embedder()?;
    let suite = match suite {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| file_err(p, e))?;
            serde_json::from_str::<BenchSuite>(&raw).map_err(|e| file_err(p, format!("malformed suite: {e}")))?
        }
        None => standard_suite(&index, standard, seed),
    };
    let engine = Engine::new(&index, model.as_ref(), &embedder).with_planner(cfg.planner.clone());
    Ok(run_bench(&engine, &suite)?)
}

pub fn query(cfg: &AppConfig, text: &str, strategy: Option<&str>) -> Result<QueryResponse, CliError> {
    let force = strategy.map(parse_strategy).transpose()?;
    let index = open_index(cfg, None)?;
    let model = if cfg.model_path.exists() { Some(load_model(cfg)?) } else { None };
    let embedder = cfg.build_embedder()?;
    let engine = Engine::new(&index, model.as_ref(), &embedder).with_planner(cfg.planner.clone());
    Ok(engine.run(text, force)?)
}

pub fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    Strategy::parse(s).ok_or_else(|| {
        let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
        CliError::Usage(format!("unknown strategy `{s}`; expected one of {}", names.join(", ")))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub path: PathBuf,
    pub bytes: u64,
    pub screens: usize,
    pub metric: String,
    pub intents: Vec<String>,
    pub ann_lists: Option<usize>,
    pub memory: MemoryReport,
}

fn summary(index: &HybridIndex, path: &Path) -> Result<IndexSummary, CliError> {
    let bytes = std::fs::metadata(path).map_err(|e| file_err(path, e))?.len();
    Ok(IndexSummary {
        path: path.to_path_buf(),
        bytes,
        screens: index.len(),
        metric: index.metric().name().to_string(),
        intents: index.intent_labels().to_vec(),
        ann_lists: index.ann().map(|a| a.nlist()),
        memory: index.memory_report(),
    })
}

/// Copies the configured index to `out`, optionally rebuilding the IVF index.
pub fn save_index(cfg: &AppConfig, out: &Path, rebuild_ann: bool) -> Result<IndexSummary, CliError> {
    let mut index = open_index(cfg, None)?;
    if rebuild_ann {
        index.build_ann(cfg.ann.seed)?;
    }
    write_index(&index, out)?;
    summary(&index, out)
}

/// Loads and verifies an index file (default: the configured one).
pub fn load_index(cfg: &AppConfig, path: Option<&Path>) -> Result<IndexSummary, CliError> {
    let path = path.unwrap_or(&cfg.index_path);
    let index = open_index(cfg, Some(path))?;
    summary(&index, path)
}
