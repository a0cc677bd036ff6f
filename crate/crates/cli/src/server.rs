//! The HTTP API, versioned under `/v1`.
//!
//! | method | path               | body                       |
//! |--------|--------------------|----------------------------|
//! | POST   | `/v1/query`        | `{"text": .., "strategy"?}` |
//! | GET    | `/v1/screens/{id}` |                            |
//! | POST   | `/v1/screens`      | a detection manifest       |
//! | GET    | `/v1/stats`        |                            |
//! | GET    | `/v1/healthz`      |                            |
//!
//! Errors are `{"error": {"kind", "message", "offset"?}}` with status 400
//! (malformed input), 404 (unknown screen), 409 (duplicate screen) or 503
//! (no model, empty index, or another write in progress).

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use screengraph::graph::load_manifest;
use screengraph::index::{HybridIndex, IndexError, SemEmbedder};
use screengraph::learning::{embedding_spread, SpreadReport};
use screengraph::pipeline::index_entry;
use screengraph::query::{parse, Engine, PlannerConfig, QueryError, QueryResponse, Strategy};
use screengraph::Encoder;

use crate::commands::{load_model, open_index, CliError};
use crate::config::AppConfig;

/// Shared service state. Readers clone the current snapshot; writers build a
/// new one and swap it in.
pub struct AppState {
    snapshot: RwLock<Arc<HybridIndex>>,
    version: AtomicU64,
    model: Option<Arc<Encoder>>,
    embedder: SemEmbedder,
    planner: PlannerConfig,
    neighbors: usize,
    cache: Option<Mutex<LruCache<String, Arc<QueryResponse>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    writer: tokio::sync::Mutex<()>,
    rebuilding: AtomicBool,
    spread: Mutex<Option<(u64, Arc<SpreadReport>)>>,
}

impl AppState {
    pub fn new(index: HybridIndex, model: Option<Encoder>, embedder: SemEmbedder, cfg: &AppConfig) -> Self {
        AppState {
            snapshot: RwLock::new(Arc::new(index)),
            version: AtomicU64::new(0),
            model: model.map(Arc::new),
            embedder,
            planner: cfg.planner.clone(),
            neighbors: cfg.server.neighbors,
            cache: NonZeroUsize::new(cfg.server.cache_size).map(|n| Mutex::new(LruCache::new(n))),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            writer: tokio::sync::Mutex::new(()),
            rebuilding: AtomicBool::new(false),
            spread: Mutex::new(None),
        }
    }

    pub fn index(&self) -> Arc<HybridIndex> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn swap(&self, index: HybridIndex) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(index);
        self.version.fetch_add(1, Ordering::SeqCst);
        if let Some(c) = &self.cache {
            c.lock().expect("cache lock").clear();
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/screens", post(add_screen))
        .route("/v1/screens/{id}", get(screen))
        .route("/v1/stats", get(stats))
        .route("/v1/healthz", get(healthz))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "not_found", "no such endpoint".into(), None) })
        .with_state(state)
}

fn error(status: StatusCode, kind: &str, message: String, offset: Option<usize>) -> Response {
    let mut body = json!({ "kind": kind, "message": message });
    if let Some(o) = offset {
        body["offset"] = json!(o);
    }
    (status, Json(json!({ "error": body }))).into_response()
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn query_error(e: QueryError) -> Response {
    let msg = e.to_string();
    match e {
        QueryError::Parse(p) => error(StatusCode::BAD_REQUEST, "parse", p.to_string(), Some(p.offset)),
        QueryError::UnknownRef(_) => error(StatusCode::NOT_FOUND, "not_found", msg, None),
        QueryError::EmptyIndex => error(StatusCode::SERVICE_UNAVAILABLE, "empty_index", msg, None),
        QueryError::NoModel => error(StatusCode::SERVICE_UNAVAILABLE, "no_model", msg, None),
        _ => error(StatusCode::BAD_REQUEST, "query", msg, None),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    text: String,
    #[serde(default)]
    strategy: Option<String>,
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let started = Instant::now();
    let req: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", format!("expected {{\"text\": ..}}: {e}"), None),
    };
    let force = match req.strategy.as_deref().map(Strategy::parse) {
        None => None,
        Some(Some(s)) => Some(s),
        Some(None) => {
            return error(StatusCode::BAD_REQUEST, "bad_request", format!("unknown strategy `{}`", req.strategy.unwrap_or_default()), None)
        }
    };
    let t = Instant::now();
    let q = match parse(&req.text) {
        Ok(q) => q,
        Err(e) => return query_error(e.into()),
    };
    let parse_ms = ms(t);
    let key = format!("{q}|{}", force.map_or("auto", |s| s.name()));
    let version = state.version.load(Ordering::SeqCst);
    let cached = state.cache.as_ref().and_then(|c| c.lock().expect("cache lock").get(&key).cloned());
    let (resp, hit) = match cached {
        Some(r) => {
            state.hits.fetch_add(1, Ordering::Relaxed);
            (r, true)
        }
        None => {
            if state.cache.is_some() {
                state.misses.fetch_add(1, Ordering::Relaxed);
            }
            let index = state.index();
            let st = state.clone();
            let run = tokio::task::spawn_blocking(move || {
                let engine = Engine::new(&index, st.model.as_deref(), &st.embedder).with_planner(st.planner.clone());
                engine.execute(&q, force)
            })
            .await;
            let mut resp = match run {
                Ok(Ok(r)) => r,
                Ok(Err(e)) => return query_error(e),
                Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None),
            };
            resp.timing_ms.parse = parse_ms;
            let resp = Arc::new(resp);
            if let Some(c) = &state.cache {
                if state.version.load(Ordering::SeqCst) == version {
                    c.lock().expect("cache lock").put(key, resp.clone());
                }
            }
            (resp, false)
        }
    };
    let mut body = serde_json::to_value(&*resp).expect("response serializes");
    body["cached"] = json!(hit);
    body["timing_ms"]["total"] = json!(ms(started));
    Json(body).into_response()
}

async fn screen(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let started = Instant::now();
    let index = state.index();
    let Some(pos) = index.position(&id) else {
        return error(StatusCode::NOT_FOUND, "not_found", format!("unknown screen `{id}`"), None);
    };
    let counts = index.metadata().counts(pos);
    let metadata: serde_json::Map<String, Value> = screengraph::graph::ElementType::ALL
        .iter()
        .filter(|t| counts[t.index()] > 0)
        .map(|t| (t.name().to_string(), json!(counts[t.index()])))
        .collect();
    let intents: serde_json::Map<String, Value> = index
        .intent_labels()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), json!(index.intent_prob(pos, i))))
        .collect();
    let neighbors: Vec<Value> = match index.neighbors(&id, state.neighbors) {
        Ok(hits) => hits.iter().map(|h| json!({ "screen_id": index.id(h.pos), "score": h.score })).collect(),
        Err(_) => Vec::new(),
    };
    Json(json!({
        "screen_id": id,
        "manifest": index.manifest(pos).to_value(),
        "metadata": { "counts": metadata, "total": index.metadata().total(pos) },
        "has_visual": index.has_visual(pos),
        "intent": intents,
        "neighbors": neighbors,
        "timing_ms": { "total": ms(started) },
    }))
    .into_response()
}

async fn add_screen(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let started = Instant::now();
    let Some(model) = state.model.clone() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no_model", "no model is loaded; ingestion is disabled".into(), None);
    };
    let manifest = match load_manifest(&body) {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, "manifest", e.to_string(), None),
    };
    let Ok(_guard) = state.writer.try_lock() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "rebuilding", "the index is being rebuilt; retry shortly".into(), None);
    };
    state.rebuilding.store(true, Ordering::SeqCst);
    let result = {
        let current = state.index();
        let id = manifest.screen_id.clone();
        if current.position(&id).is_some() {
            Err(error(StatusCode::CONFLICT, "duplicate", format!("screen `{id}` is already indexed"), None))
        } else {
            let st = state.clone();
            let built = tokio::task::spawn_blocking(move || -> Result<(HybridIndex, u32), Response> {
                let entry = index_entry(&model, &st.embedder, manifest)
                    .map_err(|e| error(StatusCode::BAD_REQUEST, "manifest", e.to_string(), None))?;
                let mut next = (*current).clone();
                let pos = next.add(entry).map_err(|e| match e {
                    IndexError::DuplicateId(id) => {
                        error(StatusCode::CONFLICT, "duplicate", format!("screen `{id}` is already indexed"), None)
                    }
                    other => error(StatusCode::BAD_REQUEST, "manifest", other.to_string(), None),
                })?;
                Ok((next, pos))
            })
            .await;
            match built {
                Ok(Ok((next, pos))) => {
                    let screens = next.len();
                    state.swap(next);
                    Ok(json!({ "screen_id": id, "position": pos, "screens": screens }))
                }
                Ok(Err(resp)) => Err(resp),
                Err(e) => Err(error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None)),
            }
        }
    };
    state.rebuilding.store(false, Ordering::SeqCst);
    match result {
        Ok(mut body) => {
            body["timing_ms"] = json!({ "total": ms(started) });
            (StatusCode::CREATED, Json(body)).into_response()
        }
        Err(resp) => resp,
    }
}

#[derive(Debug, Serialize)]
struct SpreadSummary {
    pairs: usize,
    sampled: bool,
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    collapse: bool,
}

async fn stats(State(state): State<Arc<AppState>>) -> Response {
    let started = Instant::now();
    let index = state.index();
    let version = state.version.load(Ordering::SeqCst);
    let cached = state.spread.lock().expect("spread lock").as_ref().filter(|(v, _)| *v == version).map(|(_, r)| r.clone());
    let spread = match cached {
        Some(r) => Some(r),
        None if index.len() >= 2 => {
            let idx = index.clone();
            match tokio::task::spawn_blocking(move || embedding_spread(&idx.structural_rows(), 0)).await {
                Ok(r) => {
                    let r = Arc::new(r);
                    *state.spread.lock().expect("spread lock") = Some((version, r.clone()));
                    Some(r)
                }
                Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None),
            }
        }
        None => None,
    };
    let spread = spread.map(|r| SpreadSummary {
        pairs: r.pairs,
        sampled: r.sampled,
        mean: r.mean,
        std: r.std,
        min: r.min,
        max: r.max,
        collapse: r.collapse,
    });
    let (hits, misses) = (state.hits.load(Ordering::Relaxed), state.misses.load(Ordering::Relaxed));
    let capacity = state.cache.as_ref().map_or(0, |c| c.lock().expect("cache lock").cap().get());
    Json(json!({
        "screens": index.len(),
        "version": version,
        "metric": index.metric().name(),
        "intents": index.intent_labels(),
        "memory": index.memory_report(),
        "ann": { "built": index.ann().is_some(), "nlist": index.ann().map(|a| a.nlist()) },
        "cache": {
            "capacity": capacity,
            "hits": hits,
            "misses": misses,
            "hit_rate": if hits + misses == 0 { 0.0 } else { hits as f64 / (hits + misses) as f64 },
        },
        "rebuilding": state.rebuilding.load(Ordering::SeqCst),
        "model_loaded": state.model.is_some(),
        "spread": spread,
        "timing_ms": { "total": ms(started) },
    }))
    .into_response()
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let started = Instant::now();
    Json(json!({
        "status": "ok",
        "screens": state.index().len(),
        "model_loaded": state.model.is_some(),
        "timing_ms": { "total": ms(started) },
    }))
    .into_response()
}

/// Loads the configured index (empty when absent) and model (optional), then
/// serves until interrupted.
pub async fn serve(cfg: AppConfig) -> Result<(), CliError> {
    let model = if cfg.model_path.exists() { Some(load_model(&cfg)?) } else { None };
    let index = if cfg.index_path.exists() {
        open_index(&cfg, None)?
    } else {
        let labels = model.as_ref().map_or_else(|| cfg.intents.clone(), |m| m.intent_labels.clone());
        HybridIndex::new(cfg.metric, labels)
    };
    tracing::info!(screens = index.len(), model = model.is_some(), "loaded state");
    let state = Arc::new(AppState::new(index, model, cfg.build_embedder()?, &cfg));
    let addr = format!("{}:{}", cfg.server.bind, cfg.server.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Usage(e.to_string()))
}
