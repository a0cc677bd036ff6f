//! Query execution under each strategy.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ast::{Clause, Mode, Query, Reference};
use super::fusion::{cosine_to_unit, FusionWeights, Modality};
use super::parse::parse;
use super::plan::{plan, PlannerConfig, QueryPlan, Strategy};
use super::QueryError;
use crate::graph::{load_manifest, DetectionManifest};
use crate::index::{complement, compare, intersect, HybridIndex, Metric, PosSet, Scored, SemEmbedder};
use crate::pipeline::embed_manifest;
use crate::Encoder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub screen_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    /// Per-modality scores in [0, 1].
    pub breakdown: BTreeMap<Modality, f64>,
    /// Per-modality raw values: cosines, or distances under the euclidean metric.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub raw: BTreeMap<Modality, f64>,
}

/// Stage timings in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub parse: f64,
    pub plan: f64,
    pub filter: f64,
    pub vector: f64,
    pub fuse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    /// Canonical text of the executed query.
    pub query: String,
    pub plan: QueryPlan,
    pub results: Vec<QueryResult>,
    pub timing_ms: Timing,
}

enum Probe {
    Structural(Vec<f32>),
    Visual(Option<Vec<f32>>),
    Semantic(Vec<f32>),
    Intent(usize),
}

/// Prepared per-modality probes and fusion weights.
struct Scorer<'a> {
    index: &'a HybridIndex,
    probes: Vec<(Modality, Probe)>,
    weights: FusionWeights,
}

type Scores = Vec<(Modality, f64, f64)>;

impl Scorer<'_> {
    fn modality(&self, probe: &Probe, pos: u32) -> (f64, f64) {
        let idx = self.index;
        match probe {
            Probe::Structural(q) => {
                let raw = idx.structural().score(q, pos);
                (idx.metric().unit_similarity(raw), raw)
            }
            Probe::Visual(Some(q)) if idx.has_visual(pos) => {
                let raw = idx.visual().expect("visual rows present").score(q, pos);
                (cosine_to_unit(raw), raw)
            }
            Probe::Visual(_) => (0.0, 0.0),
            Probe::Semantic(q) => {
                let raw = idx.semantic().score(q, pos);
                (cosine_to_unit(raw), raw)
            }
            Probe::Intent(label) => {
                let p = idx.intent_prob(pos, *label) as f64;
                (p, p)
            }
        }
    }

    fn primary(&self, pos: u32) -> f64 {
        self.modality(&self.probes[0].1, pos).0
    }

    fn scores(&self, pos: u32) -> Scores {
        self.probes
            .iter()
            .map(|(m, p)| {
                let (unit, raw) = self.modality(p, pos);
                (*m, unit, raw)
            })
            .collect()
    }

    fn fuse(&self, scores: &Scores) -> f64 {
        let pairs: Vec<_> = scores.iter().map(|&(m, s, _)| (m, s)).collect();
        self.weights.fuse(&pairs)
    }
}

struct Candidate {
    pos: u32,
    score: f64,
    scores: Scores,
}

/// Executes queries against one index snapshot.
pub struct Engine<'a> {
    pub index: &'a HybridIndex,
    /// Needed only for inline structural references.
    pub model: Option<&'a Encoder>,
    pub embedder: &'a SemEmbedder,
    pub planner: PlannerConfig,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl<'a> Engine<'a> {
    pub fn new(index: &'a HybridIndex, model: Option<&'a Encoder>, embedder: &'a SemEmbedder) -> Self {
        Engine { index, model, embedder, planner: PlannerConfig::default() }
    }

    pub fn with_planner(mut self, planner: PlannerConfig) -> Self {
        self.planner = planner;
        self
    }

    /// Parses and runs `text`; `force` overrides the planner's strategy.
    pub fn run(&self, text: &str, force: Option<Strategy>) -> Result<QueryResponse, QueryError> {
        let t = Instant::now();
        let q = parse(text)?;
        let parse_ms = ms(t);
        let mut resp = self.execute(&q, force)?;
        resp.timing_ms.parse = parse_ms;
        Ok(resp)
    }

    pub fn plan(&self, q: &Query, force: Option<Strategy>) -> Result<QueryPlan, QueryError> {
        plan(q, self.index, &self.planner, force)
    }

    pub fn execute(&self, q: &Query, force: Option<Strategy>) -> Result<QueryResponse, QueryError> {
        if self.index.is_empty() {
            return Err(QueryError::EmptyIndex);
        }
        if q.limit == 0 {
            return Err(QueryError::Index(crate::index::IndexError::InvalidK));
        }
        let mut timing = Timing::default();
        let t = Instant::now();
        let plan = self.plan(q, force)?;
        timing.plan = ms(t);

        let t = Instant::now();
        let scorer = if q.has_scoring() { Some(self.scorer(q)?) } else { None };
        timing.vector += ms(t);

        let candidates = match &scorer {
            None => self.filter_only(q, &plan, &mut timing),
            Some(s) => match plan.strategy {
                _ if plan.ann => self.approximate(q, &plan, s, &mut timing)?,
                Strategy::VectorOnly => {
                    let t = Instant::now();
                    let all: PosSet = (0..self.index.len() as u32).filter(|&p| self.check(q, p)).collect();
                    timing.filter += ms(t);
                    self.score_all(&all, s, &mut timing)
                }
                Strategy::MetadataOnly | Strategy::MetadataFirst => {
                    let t = Instant::now();
                    let survivors = self.survivors(q, &plan)?;
                    timing.filter += ms(t);
                    self.score_all(&survivors, s, &mut timing)
                }
                Strategy::VectorFirst => self.threshold_walk(q, &plan, s, &mut timing),
            },
        };

        let t = Instant::now();
        let results = self.rank(candidates, q.limit);
        timing.fuse += ms(t);
        Ok(QueryResponse { query: q.to_string(), plan, results, timing_ms: timing })
    }

    fn scorer(&self, q: &Query) -> Result<Scorer<'a>, QueryError> {
        let weights = FusionWeights::for_query(q)?;
        let mut probes = Vec::new();
        for clause in q.scoring() {
            let m = Modality::of(clause).expect("scoring clause");
            probes.push((m, self.probe(clause)?));
        }
        let order = |m: Modality| match m {
            Modality::Structural => 0,
            Modality::Visual => 1,
            Modality::Semantic => 2,
            Modality::Intent => 3,
        };
        probes.sort_by_key(|(m, _)| order(*m));
        Ok(Scorer { index: self.index, probes, weights })
    }

    fn inline(&self, raw: &str) -> Result<DetectionManifest, QueryError> {
        load_manifest(raw.as_bytes()).map_err(|e| QueryError::InvalidInline(e.to_string()))
    }

    fn probe(&self, clause: &Clause) -> Result<Probe, QueryError> {
        let idx = self.index;
        Ok(match clause {
            Clause::Intent { label, .. } => Probe::Intent(idx.intent_index(label).ok_or_else(|| {
                QueryError::UnknownIntent { label: label.clone(), known: idx.intent_labels().join(", ") }
            })?),
            Clause::Text { text, .. } => Probe::Semantic(idx.semantic().prepare(&self.embedder.embed(text)?)?),
            Clause::SimilarTo { reference, mode, .. } => match reference {
                Reference::Id(id) => {
                    let pos = idx.position(id).ok_or_else(|| QueryError::UnknownRef(id.clone()))?;
                    match mode {
                        Mode::Structural => Probe::Structural(idx.structural().prepare(idx.structural().row(pos))?),
                        Mode::Semantic => Probe::Semantic(idx.semantic().prepare(idx.semantic().row(pos))?),
                        Mode::Visual => {
                            let vis = idx.visual().filter(|_| idx.has_visual(pos));
                            let vis = vis.ok_or_else(|| QueryError::VisualUnavailable(id.clone()))?;
                            Probe::Visual(Some(vis.prepare(vis.row(pos))?))
                        }
                    }
                }
                Reference::Inline(raw) => {
                    let m = self.inline(raw)?;
                    match mode {
                        Mode::Structural => {
                            let model = self.model.ok_or(QueryError::NoModel)?;
                            let e = embed_manifest(model, &m).map_err(|e| QueryError::InvalidInline(e.to_string()))?;
                            Probe::Structural(idx.structural().prepare(&e.structural)?)
                        }
                        Mode::Semantic => Probe::Semantic(idx.semantic().prepare(&self.embedder.embed(&m.joined_text())?)?),
                        Mode::Visual => {
                            let v = m.visual_vec.as_ref().ok_or_else(|| QueryError::VisualUnavailable(m.screen_id.clone()))?;
                            match idx.visual() {
                                Some(vis) => Probe::Visual(Some(vis.prepare(v)?)),
                                None => Probe::Visual(None),
                            }
                        }
                    }
                }
            },
            Clause::Meta(_) | Clause::Not(_) => unreachable!("predicates are not scored"),
        })
    }

    /// Row-by-row predicate check.
    fn check(&self, q: &Query, pos: u32) -> bool {
        let counts = self.index.metadata().counts(pos);
        q.predicates().all(|c| match c {
            Clause::Meta(p) => p.matches(counts),
            Clause::Not(p) => !p.matches(counts),
            _ => true,
        })
    }

    fn postings(&self, clause: &Clause) -> Result<PosSet, QueryError> {
        let md = self.index.metadata();
        Ok(match clause {
            Clause::Meta(p) => md.filter(p)?,
            Clause::Not(p) => complement(&md.filter(p)?, md.len()),
            _ => unreachable!("only predicates have postings"),
        })
    }

    /// Metadata-index evaluation: postings intersection for metadata-only,
    /// first postings plus row checks for metadata-first.
    fn survivors(&self, q: &Query, plan: &QueryPlan) -> Result<PosSet, QueryError> {
        let n = self.index.len() as u32;
        let order = &plan.predicate_order;
        let Some(&first) = order.first() else {
            return Ok((0..n).collect());
        };
        let mut set = self.postings(&q.clauses[first])?;
        if plan.strategy == Strategy::MetadataFirst {
            set.retain(|&p| self.check(q, p));
        } else {
            for &ci in &order[1..] {
                set = intersect(&set, &self.postings(&q.clauses[ci])?);
            }
        }
        Ok(set)
    }

    fn filter_only(&self, q: &Query, plan: &QueryPlan, timing: &mut Timing) -> Vec<Candidate> {
        let t = Instant::now();
        let set = match plan.strategy {
            Strategy::MetadataOnly | Strategy::MetadataFirst => {
                self.survivors(q, plan).expect("predicates validated by the planner")
            }
            Strategy::VectorOnly | Strategy::VectorFirst => {
                (0..self.index.len() as u32).filter(|&p| self.check(q, p)).collect()
            }
        };
        timing.filter += ms(t);
        set.into_iter().map(|pos| Candidate { pos, score: 1.0, scores: Vec::new() }).collect()
    }

    fn score_all(&self, positions: &[u32], s: &Scorer, timing: &mut Timing) -> Vec<Candidate> {
        let t = Instant::now();
        let scores: Vec<Scores> = positions.iter().map(|&p| s.scores(p)).collect();
        timing.vector += ms(t);
        let t = Instant::now();
        let out = positions
            .iter()
            .zip(scores)
            .map(|(&pos, scores)| Candidate { pos, score: s.fuse(&scores), scores })
            .collect();
        timing.fuse += ms(t);
        out
    }

    fn by_rank(&self) -> impl Fn(&Scored, &Scored) -> std::cmp::Ordering + '_ {
        |a, b| compare(Metric::InnerProduct, self.index.ids(), a, b)
    }

    /// Walks screens in order of the primary modality and stops once the
    /// `k`-th best fused score beats any score still reachable.
    fn threshold_walk(&self, q: &Query, plan: &QueryPlan, s: &Scorer, timing: &mut Timing) -> Vec<Candidate> {
        let t = Instant::now();
        let mut rest: Vec<Scored> = (0..self.index.len() as u32).map(|pos| Scored { pos, score: s.primary(pos) }).collect();
        timing.vector += ms(t);
        let lead = s.weights.get(s.probes[0].0);
        let slack = 1.0 - lead;
        let k = q.limit;
        let mut fetch = plan.overfetch.max(1) * k;
        let mut kept: Vec<Candidate> = Vec::new();
        let mut best: Vec<f64> = Vec::new();
        let cmp = self.by_rank();
        while !rest.is_empty() {
            let t = Instant::now();
            let take = fetch.min(rest.len());
            if take < rest.len() {
                rest.select_nth_unstable_by(take - 1, &cmp);
            }
            let tail = rest.split_off(take);
            let mut chunk = std::mem::replace(&mut rest, tail);
            chunk.sort_unstable_by(&cmp);
            timing.vector += ms(t);
            for c in chunk {
                let t = Instant::now();
                let pass = self.check(q, c.pos);
                timing.filter += ms(t);
                if pass {
                    let t = Instant::now();
                    let scores = s.scores(c.pos);
                    timing.vector += ms(t);
                    let t = Instant::now();
                    let score = s.fuse(&scores);
                    best.push(score);
                    kept.push(Candidate { pos: c.pos, score, scores });
                    timing.fuse += ms(t);
                }
            }
            if best.len() >= k && !rest.is_empty() {
                best.sort_unstable_by(|a, b| b.total_cmp(a));
                best.truncate(k);
                let next = rest.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
                if best[k - 1] > lead * next + slack + 1e-9 {
                    break;
                }
            }
            fetch *= 2;
        }
        kept
    }

    /// Candidates from the IVF index, over-fetched until `k` pass the filters.
    fn approximate(&self, q: &Query, plan: &QueryPlan, s: &Scorer, timing: &mut Timing) -> Result<Vec<Candidate>, QueryError> {
        let ann = self.index.ann().ok_or(crate::index::IndexError::NoAnn)?;
        let Probe::Structural(qv) = &s.probes[0].1 else {
            unreachable!("the planner only picks the approximate index for structural queries")
        };
        let nprobe = plan.nprobe.unwrap_or_else(|| ann.default_nprobe()).clamp(1, ann.nlist());
        let k = q.limit;
        let mut fetch = plan.overfetch.max(1) * k;
        let mut seen = 0;
        let mut kept = Vec::new();
        loop {
            let t = Instant::now();
            let hits = ann.search(qv, fetch, nprobe, self.index.ids())?;
            timing.vector += ms(t);
            for h in &hits[seen..] {
                let t = Instant::now();
                let pass = self.check(q, h.pos);
                timing.filter += ms(t);
                if pass {
                    let t = Instant::now();
                    let scores = s.scores(h.pos);
                    timing.vector += ms(t);
                    let t = Instant::now();
                    kept.push(Candidate { pos: h.pos, score: s.fuse(&scores), scores });
                    timing.fuse += ms(t);
                }
            }
            seen = hits.len();
            if kept.len() >= k || hits.len() < fetch {
                break;
            }
            fetch *= 2;
        }
        Ok(kept)
    }

    fn rank(&self, mut cands: Vec<Candidate>, k: usize) -> Vec<QueryResult> {
        let ids = self.index.ids();
        let cmp = |a: &Candidate, b: &Candidate| {
            b.score.total_cmp(&a.score).then_with(|| ids[a.pos as usize].cmp(&ids[b.pos as usize]))
        };
        if cands.len() > k {
            cands.select_nth_unstable_by(k - 1, cmp);
            cands.truncate(k);
        }
        cands.sort_unstable_by(cmp);
        cands
            .into_iter()
            .enumerate()
            .map(|(i, c)| QueryResult {
                screen_id: ids[c.pos as usize].clone(),
                score: c.score,
                rank: i + 1,
                breakdown: c.scores.iter().map(|&(m, u, _)| (m, u)).collect(),
                raw: c.scores.iter().map(|&(m, _, r)| (m, r)).collect(),
            })
            .collect()
    }
}
