//! Cost-based strategy selection.

use serde::{Deserialize, Serialize};

use super::ast::{Clause, Mode, Query};
use super::QueryError;
use crate::index::HybridIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Score every screen, checking predicates row by row.
    VectorOnly,
    /// Intersect metadata postings; score only the survivors.
    MetadataOnly,
    /// Fetch the most selective predicate's postings, verify the rest, then score.
    MetadataFirst,
    /// Walk the best vector candidates, over-fetching until `k` pass the filters.
    VectorFirst,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::VectorOnly, Strategy::MetadataOnly, Strategy::MetadataFirst, Strategy::VectorFirst];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::VectorOnly => "vector-only",
            Strategy::MetadataOnly => "metadata-only",
            Strategy::MetadataFirst => "metadata-first",
            Strategy::VectorFirst => "vector-first",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|x| x.name() == s.to_ascii_lowercase().replace('_', "-"))
    }
}

/// When the approximate structural index is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnPolicy {
    /// Only when built and the corpus has at least `ann_min_rows` screens.
    #[default]
    Auto,
    Never,
    Always,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Combined selectivity below which filtering goes first.
    pub selectivity_threshold: f64,
    /// Cap on the vector-stage over-fetch factor.
    pub max_overfetch: usize,
    /// Numerator of the over-fetch rule `⌈c / selectivity⌉`.
    pub overfetch_numerator: f64,
    pub ann: AnnPolicy,
    pub ann_min_rows: usize,
    /// IVF lists to probe; `None` means `⌈√nlist⌉`.
    pub nprobe: Option<usize>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            selectivity_threshold: 0.05,
            max_overfetch: 10,
            overfetch_numerator: 2.0,
            ann: AnnPolicy::Auto,
            ann_min_rows: 10_000,
            nprobe: None,
        }
    }
}

impl PlannerConfig {
    /// Over-fetch factor `m = min(max, ⌈c / selectivity⌉)`, at least 1.
    pub fn overfetch(&self, selectivity: f64) -> usize {
        if selectivity <= 0.0 {
            return self.max_overfetch.max(1);
        }
        let m = (self.overfetch_numerator / selectivity).ceil();
        (m.min(self.max_overfetch as f64) as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub strategy: Strategy,
    /// Rough work estimate in scalar operations.
    pub estimated_cost: f64,
    /// Predicate clause indices, most selective first.
    pub predicate_order: Vec<usize>,
    /// Per-predicate selectivity, parallel to `predicate_order`.
    pub predicate_selectivity: Vec<f64>,
    /// Product of the predicate selectivities.
    pub selectivity: f64,
    /// Candidate multiplier for the vector stage.
    pub overfetch: usize,
    pub ann: bool,
    pub nprobe: Option<usize>,
    pub forced: bool,
}

fn clause_selectivity(index: &HybridIndex, clause: &Clause) -> Result<f64, QueryError> {
    let md = index.metadata();
    if md.is_empty() {
        return Ok(1.0);
    }
    Ok(match clause {
        Clause::Meta(p) => md.selectivity(p)?,
        Clause::Not(p) => 1.0 - md.selectivity(p)?,
        _ => 1.0,
    })
}

/// Picks a strategy for `q` from index statistics, or honors `force`.
pub fn plan(q: &Query, index: &HybridIndex, cfg: &PlannerConfig, force: Option<Strategy>) -> Result<QueryPlan, QueryError> {
    let mut preds = Vec::new();
    for (i, c) in q.clauses.iter().enumerate() {
        if c.is_predicate() {
            preds.push((i, clause_selectivity(index, c)?));
        }
    }
    preds.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let selectivity: f64 = preds.iter().map(|p| p.1).product();
    let scoring = q.has_scoring();

    let chosen = if !scoring {
        Strategy::MetadataOnly
    } else if preds.is_empty() {
        Strategy::VectorOnly
    } else if selectivity < cfg.selectivity_threshold {
        Strategy::MetadataFirst
    } else {
        Strategy::VectorFirst
    };
    let strategy = force.unwrap_or(chosen);

    let n = index.len() as f64;
    let structural = q.clauses.iter().any(|c| matches!(c, Clause::SimilarTo { mode: Mode::Structural, .. }));
    let ann = structural
        && index.ann().is_some()
        && matches!(strategy, Strategy::VectorFirst | Strategy::VectorOnly)
        && match cfg.ann {
            AnnPolicy::Never => false,
            AnnPolicy::Always => true,
            AnnPolicy::Auto => index.len() >= cfg.ann_min_rows,
        };
    let overfetch = if strategy == Strategy::VectorFirst || ann { cfg.overfetch(selectivity) } else { 1 };

    let dim = index.structural().dim() as f64;
    let modalities = q.scoring().count() as f64;
    let lookup = (n + 1.0).log2();
    let k = q.limit as f64;
    let scan = if ann {
        let ivf = index.ann().expect("checked above");
        let probe = cfg.nprobe.unwrap_or_else(|| ivf.default_nprobe()) as f64;
        ivf.nlist() as f64 * dim + n * probe / ivf.nlist() as f64 * dim
    } else {
        n * dim * modalities
    };
    let survivors = selectivity * n;
    let estimated_cost = match strategy {
        Strategy::MetadataOnly => preds.len() as f64 * (lookup + n) + survivors * dim * modalities,
        Strategy::MetadataFirst => {
            let first = preds.first().map_or(1.0, |p| p.1) * n;
            lookup + first * preds.len() as f64 + survivors * dim * modalities
        }
        Strategy::VectorFirst => scan + overfetch as f64 * k * (preds.len() as f64 + dim * modalities),
        Strategy::VectorOnly => scan + n * preds.len() as f64,
    };

    Ok(QueryPlan {
        strategy,
        estimated_cost,
        predicate_order: preds.iter().map(|p| p.0).collect(),
        predicate_selectivity: preds.iter().map(|p| p.1).collect(),
        selectivity,
        overfetch,
        ann,
        nprobe: if ann { cfg.nprobe } else { None },
        forced: force.is_some(),
    })
}
