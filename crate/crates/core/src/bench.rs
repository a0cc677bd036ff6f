//! Query latency measurement.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::ElementType;
use crate::index::HybridIndex;
use crate::query::{Engine, QueryError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchQuery {
    /// Free-form tag; latencies are reported per kind.
    pub kind: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSuite {
    pub queries: Vec<BenchQuery>,
    /// Timed runs per query after the first (cold) one.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    5
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("the suite has no queries")]
    EmptySuite,
    #[error("query {index} ({kind}) failed: {source}")]
    Query { index: usize, kind: String, source: QueryError },
}

/// Latency percentiles in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let count = ms.len();
        let mean = if count == 0 { f64::NAN } else { ms.iter().sum::<f64>() / count as f64 };
        LatencyStats {
            count,
            mean,
            p50: percentile(&ms, 50.0),
            p90: percentile(&ms, 90.0),
            p95: percentile(&ms, 95.0),
            p99: percentile(&ms, 99.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub queries: usize,
    pub cold: LatencyStats,
    pub warm: LatencyStats,
    /// Strategy name → number of queries planned with it.
    pub strategies: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub screens: usize,
    pub kinds: BTreeMap<String, KindReport>,
    /// Result ids of each query, in suite order.
    pub results: Vec<Vec<String>>,
    /// Approximate structural search latency, when the index has one built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ann: Option<LatencyStats>,
}

/// Stored rows used as probes for [`ann_latency`] in [`run_bench`].
pub const ANN_PROBES: usize = 200;

/// Runs every query once cold and `repeats` times warm. With an approximate
/// index built, also times it on up to [`ANN_PROBES`] stored rows.
pub fn run_bench(engine: &Engine, suite: &BenchSuite) -> Result<BenchReport, BenchError> {
    if suite.queries.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    let mut cold: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut warm: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut strategies: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
    let mut results = Vec::with_capacity(suite.queries.len());
    for (index, bq) in suite.queries.iter().enumerate() {
        let fail = |source| BenchError::Query { index, kind: bq.kind.clone(), source };
        let t = Instant::now();
        let resp = engine.run(&bq.query, None).map_err(fail)?;
        cold.entry(&bq.kind).or_default().push(t.elapsed().as_secs_f64() * 1e3);
        *strategies.entry(&bq.kind).or_default().entry(resp.plan.strategy.name().to_string()).or_default() += 1;
        results.push(resp.results.into_iter().map(|r| r.screen_id).collect());
        for _ in 0..suite.repeats {
            let t = Instant::now();
            engine.run(&bq.query, None).map_err(fail)?;
            warm.entry(&bq.kind).or_default().push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    let kinds = cold
        .into_iter()
        .map(|(kind, c)| {
            let report = KindReport {
                queries: c.len(),
                cold: LatencyStats::from_samples(c),
                warm: LatencyStats::from_samples(warm.remove(kind).unwrap_or_default()),
                strategies: strategies.remove(kind).unwrap_or_default(),
            };
            (kind.to_string(), report)
        })
        .collect();
    let index = engine.index;
    let ann = match index.ann() {
        Some(_) => {
            let step = (index.len() / ANN_PROBES).max(1);
            let probes: Vec<Vec<f32>> =
                (0..index.len()).step_by(step).take(ANN_PROBES).map(|p| index.structural().row(p as u32).to_vec()).collect();
            Some(ann_latency(index, &probes, 10, suite.repeats.max(1)).expect("nonempty index with a built ANN"))
        }
        None => None,
    };
    Ok(BenchReport { screens: index.len(), kinds, results, ann })
}

/// Latency of approximate structural search over `probes`.
pub fn ann_latency(index: &HybridIndex, probes: &[Vec<f32>], k: usize, repeats: usize) -> Result<LatencyStats, crate::index::IndexError> {
    let mut ms = Vec::with_capacity(probes.len() * repeats);
    for q in probes {
        for _ in 0..repeats {
            let t = Instant::now();
            std::hint::black_box(index.search_structural_ann(q, k, None)?);
            ms.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(LatencyStats::from_samples(ms))
}

/// A mixed suite drawn from the indexed screens: `metadata`, `structural`,
/// `semantic` and `hybrid` kinds, `per_kind` queries each.
pub fn standard_suite(index: &HybridIndex, per_kind: usize, seed: u64) -> BenchSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = index.len();
    let mut queries = Vec::new();
    let pick = |rng: &mut ChaCha8Rng| rng.random_range(0..n.max(1)) as u32;
    let words = |rng: &mut ChaCha8Rng, pos: u32| {
        let text = index.manifest(pos).joined_text();
        let toks = crate::index::tokenize(&text);
        let chosen: Vec<_> = toks.choose_multiple(rng, 3).cloned().collect();
        if chosen.is_empty() { "screen".to_string() } else { chosen.join(" ") }
    };
    let types = [ElementType::TextBox, ElementType::Button, ElementType::CheckBox, ElementType::Table, ElementType::Label];
    for _ in 0..per_kind {
        let t = types.choose(&mut rng).expect("nonempty");
        let lo = rng.random_range(1..4);
        queries.push(BenchQuery {
            kind: "metadata".into(),
            query: format!("FIND WHERE count({t}) BETWEEN {lo} AND {} AND has({})", lo + 2, ElementType::Button),
        });
    }
    if n == 0 {
        return BenchSuite { queries, repeats: default_repeats() };
    }
    for _ in 0..per_kind {
        let id = index.id(pick(&mut rng));
        queries.push(BenchQuery { kind: "structural".into(), query: format!("FIND WHERE similar_to({})", crate::query::quote(id)) });
    }
    for _ in 0..per_kind {
        let p = pick(&mut rng);
        queries.push(BenchQuery { kind: "semantic".into(), query: format!("FIND WHERE text ~ {}", crate::query::quote(&words(&mut rng, p))) });
    }
    for _ in 0..per_kind {
        let p = pick(&mut rng);
        let intent = index.intent_labels().choose(&mut rng).cloned();
        let mut q = format!("FIND WHERE similar_to({}, mode=structural, weight=0.6)", crate::query::quote(index.id(p)));
        q.push_str(&format!(" AND text ~ {} (weight=0.2)", crate::query::quote(&words(&mut rng, p))));
        if let Some(label) = intent {
            q.push_str(&format!(" AND intent({}, weight=0.2)", crate::query::quote(&label)));
        }
        q.push_str(" AND count(any) >= 3");
        queries.push(BenchQuery { kind: "hybrid".into(), query: q });
    }
    BenchSuite { queries, repeats: default_repeats() }
}
