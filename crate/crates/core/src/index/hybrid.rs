//! The combined store: structural, semantic and visual vectors, intent
//! probabilities and element-count metadata for each screen.

use std::collections::HashMap;

use super::ivf::IvfIndex;
use super::metadata::MetadataIndex;
use super::vector::{FlatIndex, Metric, Scored};
use super::{report_memory, IndexError, MemoryReport, EMBED_DIM};
use crate::graph::DetectionManifest;

/// Everything needed to add one screen.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub manifest: DetectionManifest,
    pub structural: Vec<f32>,
    pub semantic: Vec<f32>,
    /// Class probabilities in the order of the index's intent labels.
    pub intent_probs: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridIndex {
    pub(crate) ids: Vec<String>,
    pub(crate) positions: HashMap<String, u32>,
    pub(crate) manifests: Vec<DetectionManifest>,
    pub(crate) structural: FlatIndex,
    pub(crate) semantic: FlatIndex,
    pub(crate) visual: Option<FlatIndex>,
    pub(crate) visual_present: Vec<bool>,
    pub(crate) intent_labels: Vec<String>,
    pub(crate) intent_probs: Vec<f32>,
    pub(crate) metadata: MetadataIndex,
    pub(crate) ann: Option<IvfIndex>,
}

impl HybridIndex {
    pub fn new(metric: Metric, intent_labels: Vec<String>) -> Self {
        HybridIndex {
            ids: Vec::new(),
            positions: HashMap::new(),
            manifests: Vec::new(),
            structural: FlatIndex::new(metric, EMBED_DIM),
            semantic: FlatIndex::new(Metric::Cosine, EMBED_DIM),
            visual: None,
            visual_present: Vec::new(),
            intent_labels,
            intent_probs: Vec::new(),
            metadata: MetadataIndex::new(),
            ann: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.structural.metric()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, pos: u32) -> &str {
        &self.ids[pos as usize]
    }

    pub fn position(&self, id: &str) -> Option<u32> {
        self.positions.get(id).copied()
    }

    pub fn manifest(&self, pos: u32) -> &DetectionManifest {
        &self.manifests[pos as usize]
    }

    pub fn structural(&self) -> &FlatIndex {
        &self.structural
    }

    pub fn semantic(&self) -> &FlatIndex {
        &self.semantic
    }

    pub fn visual(&self) -> Option<&FlatIndex> {
        self.visual.as_ref()
    }

    pub fn has_visual(&self, pos: u32) -> bool {
        self.visual_present[pos as usize]
    }

    pub fn metadata(&self) -> &MetadataIndex {
        &self.metadata
    }

    pub fn ann(&self) -> Option<&IvfIndex> {
        self.ann.as_ref()
    }

    pub fn intent_labels(&self) -> &[String] {
        &self.intent_labels
    }

    pub fn intent_index(&self, label: &str) -> Option<usize> {
        self.intent_labels.iter().position(|l| l == label)
    }

    pub fn intent_prob(&self, pos: u32, label: usize) -> f32 {
        self.intent_probs[pos as usize * self.intent_labels.len() + label]
    }

    /// Adds one screen. Either every family is updated or, on error, none is.
    pub fn add(&mut self, entry: IndexEntry) -> Result<u32, IndexError> {
        let id = entry.manifest.screen_id.clone();
        if self.positions.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        self.structural.check(&entry.structural)?;
        self.semantic.check(&entry.semantic)?;
        if entry.intent_probs.len() != self.intent_labels.len() {
            return Err(IndexError::Dimension { expected: self.intent_labels.len(), got: entry.intent_probs.len() });
        }
        if let Some(v) = &entry.manifest.visual_vec {
            match &self.visual {
                Some(f) => f.check(v)?,
                None if v.is_empty() || v.iter().any(|x| !x.is_finite()) => return Err(IndexError::NonFinite),
                None => {}
            }
        }

        let pos = self.structural.push(&entry.structural)?;
        self.semantic.push(&entry.semantic)?;
        if let Some(v) = &entry.manifest.visual_vec {
            let n = self.ids.len();
            let f = self.visual.get_or_insert_with(|| {
                let mut f = FlatIndex::new(Metric::Cosine, v.len());
                for _ in 0..n {
                    f.push(&vec![0.0; v.len()]).expect("zero row");
                }
                f
            });
            f.push(v)?;
        } else if let Some(f) = &mut self.visual {
            f.push(&vec![0.0; f.dim()])?;
        }
        self.visual_present.push(entry.manifest.visual_vec.is_some());
        self.intent_probs.extend_from_slice(&entry.intent_probs);
        self.metadata.push(entry.manifest.type_counts());
        if let Some(ann) = &mut self.ann {
            ann.push(self.structural.row(pos));
        }
        self.positions.insert(id.clone(), pos);
        self.ids.push(id);
        self.manifests.push(entry.manifest);
        Ok(pos)
    }

    /// (Re)builds the approximate structural index over all current rows.
    pub fn build_ann(&mut self, seed: u64) -> Result<(), IndexError> {
        self.ann = Some(IvfIndex::build(&self.structural, seed)?);
        Ok(())
    }

    pub fn drop_ann(&mut self) {
        self.ann = None;
    }

    /// Exact structural top-`k` for a raw query vector.
    pub fn search_structural(&self, q: &[f32], k: usize) -> Result<Vec<Scored>, IndexError> {
        self.structural.search(q, k, &self.ids)
    }

    /// Approximate structural top-`k`; `nprobe` defaults to `⌈√nlist⌉`.
    pub fn search_structural_ann(&self, q: &[f32], k: usize, nprobe: Option<usize>) -> Result<Vec<Scored>, IndexError> {
        let ann = self.ann.as_ref().ok_or(IndexError::NoAnn)?;
        let q = self.structural.prepare(q)?;
        ann.search(&q, k, nprobe.unwrap_or_else(|| ann.default_nprobe()), &self.ids)
    }

    /// The `k` structurally closest other screens.
    pub fn neighbors(&self, id: &str, k: usize) -> Result<Vec<Scored>, IndexError> {
        let pos = self.position(id).ok_or_else(|| IndexError::UnknownId(id.to_string()))?;
        let hits = self.structural.search(self.structural.row(pos), k + 1, &self.ids)?;
        Ok(hits.into_iter().filter(|h| h.pos != pos).take(k).collect())
    }

    /// Byte accounting for the dense families and the quantized codes.
    pub fn memory_report(&self) -> MemoryReport {
        let families = 2 + usize::from(self.visual.is_some());
        let mut r = report_memory(self.len(), EMBED_DIM, families);
        r.quantized_built = self.ann.as_ref().map(IvfIndex::code_bytes);
        r
    }

    /// Structural vectors of all screens, in position order.
    pub fn structural_rows(&self) -> Vec<Vec<f32>> {
        (0..self.len() as u32).map(|p| self.structural.row(p).to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BBox, Detection, ElementType};

    pub(crate) fn entry(id: &str, seed: u32) -> IndexEntry {
        let mut s = vec![0.0f32; EMBED_DIM];
        s[(seed as usize) % EMBED_DIM] = 1.0;
        s[(seed as usize * 7 + 3) % EMBED_DIM] += 0.5;
        IndexEntry {
            manifest: DetectionManifest {
                screen_id: id.into(),
                width: 100.0,
                height: 100.0,
                elements: (0..seed % 4)
                    .map(|_| Detection {
                        elem_type: ElementType::TextBox,
                        bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
                        confidence: 1.0,
                        text: None,
                    })
                    .collect(),
                visual_vec: None,
                intent_label: None,
            },
            structural: s.clone(),
            semantic: s,
            intent_probs: vec![0.25, 0.75],
        }
    }

    fn index() -> HybridIndex {
        HybridIndex::new(Metric::Cosine, vec!["a".into(), "b".into()])
    }

    #[test]
    fn add_and_self_retrieve() {
        let mut idx = index();
        for i in 0..20 {
            idx.add(entry(&format!("s{i:02}"), i)).unwrap();
        }
        let q = entry("q", 5).structural;
        let hits = idx.search_structural(&q, 3).unwrap();
        assert_eq!(idx.id(hits[0].pos), "s05");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        assert_eq!(idx.intent_prob(3, 1), 0.75);
    }

    #[test]
    fn duplicate_and_bad_entries_leave_the_index_unchanged() {
        let mut idx = index();
        idx.add(entry("x", 1)).unwrap();
        let before = idx.clone();
        assert_eq!(idx.add(entry("x", 2)), Err(IndexError::DuplicateId("x".into())));
        let mut bad = entry("y", 2);
        bad.semantic.pop();
        assert!(idx.add(bad).is_err());
        let mut bad = entry("z", 2);
        bad.intent_probs.push(0.0);
        assert!(idx.add(bad).is_err());
        assert_eq!(idx, before);
    }

    #[test]
    fn visual_family_backfills_missing_rows() {
        let mut idx = index();
        idx.add(entry("a", 1)).unwrap();
        let mut e = entry("b", 2);
        e.manifest.visual_vec = Some(vec![1.0, 0.0, 0.0]);
        idx.add(e).unwrap();
        idx.add(entry("c", 3)).unwrap();
        let v = idx.visual().unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!((idx.has_visual(0), idx.has_visual(1), idx.has_visual(2)), (false, true, false));
        let mut e = entry("d", 4);
        e.manifest.visual_vec = Some(vec![1.0, 0.0]);
        assert!(matches!(idx.add(e), Err(IndexError::Dimension { .. })));
    }

    #[test]
    fn ann_tracks_later_additions() {
        let mut idx = index();
        for i in 0..30 {
            idx.add(entry(&format!("s{i:02}"), i)).unwrap();
        }
        idx.build_ann(0).unwrap();
        idx.add(entry("late", 77)).unwrap();
        let ann = idx.ann().unwrap();
        assert_eq!(ann.lists().iter().map(Vec::len).sum::<usize>(), 31);
        let nlist = ann.nlist();
        let hits = idx.search_structural_ann(&entry("q", 77).structural, 1, Some(nlist)).unwrap();
        assert_eq!(idx.id(hits[0].pos), "late");
    }

    #[test]
    fn neighbors_exclude_the_screen_itself() {
        let mut idx = index();
        for i in 0..10 {
            idx.add(entry(&format!("s{i}"), i)).unwrap();
        }
        let n = idx.neighbors("s3", 4).unwrap();
        assert_eq!(n.len(), 4);
        assert!(n.iter().all(|h| h.pos != 3));
        assert!(idx.neighbors("nope", 4).is_err());
    }
}
