//! Brute-force reference for query execution.

use crate::graph::DetectionManifest;
use crate::index::{Metric, MetaPredicate, SemEmbedder, TypeCounts, TypeSel};
use crate::index::CountOp;
use crate::query::{Clause, FusionWeights, Mode, Modality, Query, Reference};

/// One screen as raw model outputs, independent of any index structure.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleScreen {
    pub manifest: DetectionManifest,
    pub structural: Vec<f32>,
    pub semantic: Vec<f32>,
    pub intent_probs: Vec<f32>,
}

pub struct OracleCorpus<'a> {
    pub screens: &'a [OracleScreen],
    pub metric: Metric,
    pub intent_labels: &'a [String],
    pub embedder: &'a SemEmbedder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleHit {
    pub screen_id: String,
    pub score: f64,
}

fn counts(m: &DetectionManifest) -> TypeCounts {
    let mut c = [0u32; crate::graph::NUM_ELEMENT_TYPES];
    for e in &m.elements {
        c[e.elem_type.index()] += 1;
    }
    c
}

fn holds(p: &MetaPredicate, c: &TypeCounts) -> bool {
    let v = match p.target {
        TypeSel::Type(t) => c[t.index()],
        TypeSel::Any => c.iter().sum(),
    };
    match p.op {
        CountOp::Eq(x) => v == x,
        CountOp::Lt(x) => v < x,
        CountOp::Le(x) => v <= x,
        CountOp::Gt(x) => v > x,
        CountOp::Ge(x) => v >= x,
        CountOp::Between(a, b) => a <= v && v <= b,
        CountOp::Has => v > 0,
        CountOp::NotHas => v == 0,
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

fn unit_cos(c: f64) -> f64 {
    ((1.0 + c) / 2.0).clamp(0.0, 1.0)
}

fn structural(metric: Metric, q: &[f32], v: &[f32]) -> f64 {
    match metric {
        Metric::Cosine => unit_cos(cosine(q, v)),
        Metric::InnerProduct => unit_cos(q.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()),
        Metric::Euclidean => {
            let d: f64 = q.iter().zip(v).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            1.0 / (1.0 + d.sqrt())
        }
    }
}

/// Filters every screen by every predicate, scores the survivors on every
/// active modality and sorts by score, then screen id. Inline references
/// are not supported.
pub fn oracle_search(corpus: &OracleCorpus, q: &Query) -> Result<Vec<OracleHit>, String> {
    let find = |id: &str| corpus.screens.iter().find(|s| s.manifest.screen_id == id).ok_or(format!("unknown screen `{id}`"));
    let mut scorers: Vec<(Modality, Box<dyn Fn(&OracleScreen) -> f64 + '_>)> = Vec::new();
    for c in q.clauses.iter() {
        match c {
            Clause::Meta(_) | Clause::Not(_) => {}
            Clause::Intent { label, .. } => {
                let i = corpus.intent_labels.iter().position(|l| l == label).ok_or(format!("unknown intent `{label}`"))?;
                scorers.push((Modality::Intent, Box::new(move |s| s.intent_probs[i] as f64)));
            }
            Clause::Text { text, .. } => {
                let v = corpus.embedder.embed(text).map_err(|e| e.to_string())?;
                scorers.push((Modality::Semantic, Box::new(move |s| unit_cos(cosine(&v, &s.semantic)))));
            }
            Clause::SimilarTo { reference: Reference::Inline(_), .. } => return Err("inline references are not supported".into()),
            Clause::SimilarTo { reference: Reference::Id(id), mode, .. } => {
                let r = find(id)?;
                match mode {
                    Mode::Structural => {
                        let v = r.structural.clone();
                        let metric = corpus.metric;
                        scorers.push((Modality::Structural, Box::new(move |s| structural(metric, &v, &s.structural))));
                    }
                    Mode::Semantic => {
                        let v = r.semantic.clone();
                        scorers.push((Modality::Semantic, Box::new(move |s| unit_cos(cosine(&v, &s.semantic)))));
                    }
                    Mode::Visual => {
                        let v = r.manifest.visual_vec.clone().ok_or(format!("`{id}` has no visual vector"))?;
                        scorers.push((
                            Modality::Visual,
                            Box::new(move |s| s.manifest.visual_vec.as_ref().map_or(0.0, |w| unit_cos(cosine(&v, w)))),
                        ));
                    }
                }
            }
        }
    }
    let weights = if scorers.is_empty() { None } else { Some(FusionWeights::for_query(q).map_err(|e| e.to_string())?) };

    let mut hits: Vec<OracleHit> = corpus
        .screens
        .iter()
        .filter(|s| {
            let c = counts(&s.manifest);
            q.clauses.iter().all(|cl| match cl {
                Clause::Meta(p) => holds(p, &c),
                Clause::Not(p) => !holds(p, &c),
                _ => true,
            })
        })
        .map(|s| {
            let score = match &weights {
                None => 1.0,
                Some(w) => scorers.iter().map(|(m, f)| w.get(*m) * f(s)).sum(),
            };
            OracleHit { screen_id: s.manifest.screen_id.clone(), score }
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.screen_id.cmp(&b.screen_id)));
    hits.truncate(q.limit);
    Ok(hits)
}
