//! Application configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use screengraph::index::{Metric, PrecomputedEmbedder, SemEmbedder, EMBED_DIM};
use screengraph::learning::TrainConfig;
use screengraph::query::PlannerConfig;
use screengraph::synth::INTENTS;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hashed {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// A JSON file `{"dim": d, "table": {"text": [..], ..}}`.
    Precomputed { path: PathBuf },
}

fn default_dim() -> usize {
    EMBED_DIM
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashed { seed: 0, dim: EMBED_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u32,
    /// Result cache entries; 0 disables the cache.
    pub cache_size: usize,
    /// Neighbors listed by `GET /v1/screens/{id}`.
    pub neighbors: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { bind: "127.0.0.1".into(), port: 8080, cache_size: 256, neighbors: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnConfig {
    /// Build the IVF index after ingestion once the corpus has this many screens.
    pub build_min_rows: usize,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig { build_min_rows: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub data_dir: PathBuf,
    pub model_path: PathBuf,
    pub index_path: PathBuf,
    pub metric: Metric,
    pub intents: Vec<String>,
    pub embedder: EmbedderConfig,
    pub planner: PlannerConfig,
    pub ann: AnnConfig,
    pub train: TrainConfig,
    pub server: ServerConfig,
    pub log_level: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            data_dir: "data".into(),
            model_path: "model.sgck".into(),
            index_path: "index.sgix".into(),
            metric: Metric::Cosine,
            intents: INTENTS.iter().map(|s| s.to_string()).collect(),
            embedder: EmbedderConfig::default(),
            planner: PlannerConfig::default(),
            ann: AnnConfig::default(),
            train: TrainConfig::default(),
            server: ServerConfig::default(),
            log_level: "info".into(),
        }
    }
}

impl AppConfig {
    /// Reads `path`, or the defaults when `None`. Relative paths inside the
    /// file are resolved against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            let cfg = AppConfig::default();
            cfg.validate()?;
            return Ok(cfg);
        };
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: shown.clone(), source })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: shown.clone(), message },
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve(base);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig = toml::from_str(text).map_err(|e| ConfigError::Parse { path: "<inline>".into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.model_path);
        fix(&mut self.index_path);
        if let EmbedderConfig::Precomputed { path } = &mut self.embedder {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=65535).contains(&self.server.port) {
            return bad(format!("server.port {} is outside 1..=65535", self.server.port));
        }
        if self.log_level.parse::<tracing::Level>().is_err() {
            return bad(format!("unknown log_level `{}`", self.log_level));
        }
        let p = &self.planner;
        if !(p.selectivity_threshold > 0.0 && p.selectivity_threshold <= 1.0) {
            return bad(format!("planner.selectivity_threshold {} is outside (0, 1]", p.selectivity_threshold));
        }
        if p.max_overfetch == 0 || p.overfetch_numerator <= 0.0 {
            return bad("planner over-fetch constants must be positive".into());
        }
        if self.intents.is_empty() {
            return bad("at least one intent label is required".into());
        }
        if let EmbedderConfig::Hashed { dim, .. } = self.embedder {
            if dim != EMBED_DIM {
                return bad(format!("embedder.dim must be {EMBED_DIM}"));
            }
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_embedder(&self) -> Result<SemEmbedder, ConfigError> {
        match &self.embedder {
            EmbedderConfig::Hashed { seed, dim } => {
                Ok(SemEmbedder::Hashed(screengraph::index::HashedEmbedder::new(*seed, *dim)))
            }
            EmbedderConfig::Precomputed { path } => {
                let shown = path.display().to_string();
                let raw = std::fs::read(path).map_err(|source| ConfigError::Read { path: shown.clone(), source })?;
                let table: PrecomputedEmbedder =
                    serde_json::from_slice(&raw).map_err(|e| ConfigError::Parse { path: shown, message: e.to_string() })?;
                if table.dim != EMBED_DIM {
                    return Err(ConfigError::Invalid(format!("precomputed embeddings must be {EMBED_DIM}-dim")));
                }
                Ok(SemEmbedder::Precomputed(table))
            }
        }
    }

    pub fn log_level(&self) -> tracing::Level {
        self.log_level.parse().unwrap_or(tracing::Level::INFO)
    }
}
