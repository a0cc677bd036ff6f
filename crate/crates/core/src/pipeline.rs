//! Manifest ingestion: graph construction, encoding and index insertion.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderError, ForwardMode};
use crate::graph::{build_graph, load_manifest, DetectionManifest, GraphError};
use crate::graph::TypeVocabulary;
use crate::learning::TrainingSample;
use crate::index::{HybridIndex, IndexEntry, IndexError, Metric, SemEmbedder, EMBED_DIM};
use crate::{Encoder, Graph};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("model produces {got}-dim embeddings; the index stores {EMBED_DIM}")]
    Dimension { got: usize },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Model outputs for one screen.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub structural: Vec<f32>,
    /// In the order of the model's intent labels.
    pub intent_probs: Vec<f32>,
}

fn embed_graph(model: &Encoder, graph: &Graph) -> Result<Embedded, PipelineError> {
    let e = model.forward(graph, ForwardMode::Eval)?;
    if e.g.len() != EMBED_DIM {
        return Err(PipelineError::Dimension { got: e.g.len() });
    }
    let intent_probs = if model.intent_labels.is_empty() { Vec::new() } else { model.predict_intent(&e.g).to_vec() };
    Ok(Embedded { structural: e.g.to_vec(), intent_probs })
}

/// Structural embedding and intent probabilities of one manifest.
pub fn embed_manifest(model: &Encoder, manifest: &DetectionManifest) -> Result<Embedded, PipelineError> {
    let graph = build_graph::<f32>(manifest, &model.vocab)?;
    embed_graph(model, &graph)
}

/// Everything the index needs for one manifest.
pub fn index_entry(model: &Encoder, embedder: &SemEmbedder, manifest: DetectionManifest) -> Result<IndexEntry, PipelineError> {
    let e = embed_manifest(model, &manifest)?;
    let semantic = embedder.embed(&manifest.joined_text())?;
    Ok(IndexEntry { manifest, structural: e.structural, semantic, intent_probs: e.intent_probs })
}

/// An empty index whose intent labels match `model`.
pub fn new_index(model: &Encoder, metric: Metric) -> HybridIndex {
    HybridIndex::new(metric, model.intent_labels.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    /// File name or screen id.
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub load_ms: f64,
    pub graph_ms: f64,
    pub encode_ms: f64,
    pub index_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub screens_seen: usize,
    pub screens_indexed: usize,
    pub skipped: Vec<Skipped>,
    pub wall_ms: f64,
    pub stages: StageTiming,
}

/// A manifest to ingest, or the reason it could not be loaded.
pub type Loaded = (String, Result<DetectionManifest, String>);

/// Loads every `*.json` file in `dir`, in file-name order. Unparseable files
/// are returned as errors rather than aborting.
pub fn read_manifest_dir(dir: &Path) -> Result<Vec<Loaded>, PipelineError> {
    let io = |e| PipelineError::Io { path: dir.display().to_string(), source: e };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    Ok(paths
        .par_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let loaded = std::fs::read(p).map_err(|e| e.to_string()).and_then(|raw| load_manifest(&raw).map_err(|e| e.to_string()));
            (name, loaded)
        })
        .collect())
}

/// Adds each manifest to `index`. Failures are recorded in the report and
/// never abort the batch.
pub fn ingest(model: &Encoder, embedder: &SemEmbedder, index: &mut HybridIndex, items: Vec<Loaded>) -> IngestReport {
    let start = Instant::now();
    let mut report = IngestReport { screens_seen: items.len(), ..Default::default() };

    let t = Instant::now();
    let graphs: Vec<_> = items
        .into_par_iter()
        .map(|(source, loaded)| {
            let m = loaded.map_err(|reason| Skipped { source: source.clone(), reason })?;
            if m.elements.is_empty() {
                return Err(Skipped { source, reason: format!("screen `{}` has no elements", m.screen_id) });
            }
            match build_graph::<f32>(&m, &model.vocab) {
                Ok(g) => Ok((source, m, g)),
                Err(e) => Err(Skipped { source, reason: e.to_string() }),
            }
        })
        .collect();
    report.stages.graph_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let encoded: Vec<_> = graphs
        .into_par_iter()
        .map(|r| {
            let (source, m, g) = r?;
            match embed_graph(model, &g) {
                Ok(e) => Ok((source, m, e)),
                Err(e) => Err(Skipped { source, reason: e.to_string() }),
            }
        })
        .collect();
    report.stages.encode_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    for r in encoded {
        let added = r.and_then(|(source, manifest, e)| {
            let semantic = embedder.embed(&manifest.joined_text()).map_err(|err| Skipped { source: source.clone(), reason: err.to_string() })?;
            let entry = IndexEntry { manifest, structural: e.structural, semantic, intent_probs: e.intent_probs };
            index.add(entry).map_err(|err| {
                let reason = match err {
                    IndexError::DuplicateId(_) => "duplicate id".to_string(),
                    other => other.to_string(),
                };
                Skipped { source, reason }
            })
        });
        match added {
            Ok(_) => report.screens_indexed += 1,
            Err(s) => report.skipped.push(s),
        }
    }
    report.stages.index_ms = t.elapsed().as_secs_f64() * 1e3;
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    report
}

/// Reads and ingests a directory of manifests.
pub fn ingest_dir(model: &Encoder, embedder: &SemEmbedder, index: &mut HybridIndex, dir: &Path) -> Result<IngestReport, PipelineError> {
    let t = Instant::now();
    let items = read_manifest_dir(dir)?;
    let load_ms = t.elapsed().as_secs_f64() * 1e3;
    let mut report = ingest(model, embedder, index, items);
    report.stages.load_ms = load_ms;
    report.wall_ms += load_ms;
    Ok(report)
}

/// Wraps in-memory manifests for [`ingest`].
pub fn loaded(manifests: impl IntoIterator<Item = DetectionManifest>) -> Vec<Loaded> {
    manifests.into_iter().map(|m| (m.screen_id.clone(), Ok(m))).collect()
}

/// Training samples for `manifests`, with intent labels mapped through
/// `labels`. Manifests without elements are left out; an intent label
/// missing from `labels` leaves the sample unlabeled.
pub fn training_samples(manifests: &[DetectionManifest], vocab: &TypeVocabulary, labels: &[String]) -> Vec<TrainingSample<f32>> {
    manifests
        .par_iter()
        .filter_map(|m| {
            let g = build_graph::<f32>(m, vocab).ok()?;
            let intent = m.intent_label.as_ref().and_then(|l| labels.iter().position(|x| x == l));
            Some(TrainingSample::new(&g, intent))
        })
        .collect()
}

/// Indexes `manifests` with `model`, failing on the first error.
pub fn build_index(model: &Encoder, embedder: &SemEmbedder, metric: Metric, manifests: Vec<DetectionManifest>) -> Result<HybridIndex, PipelineError> {
    let entries: Vec<_> = manifests.into_par_iter().map(|m| index_entry(model, embedder, m)).collect::<Result<_, _>>()?;
    let mut index = new_index(model, metric);
    for e in entries {
        index.add(e)?;
    }
    Ok(index)
}
