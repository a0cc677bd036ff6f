use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::element::{ElementType, NUM_ELEMENT_TYPES};
use super::manifest::{BBox, DetectionManifest};
use crate::scalar::Scalar;

pub const FEATURE_DIM: usize = 16;
pub const ONEHOT_SLOTS: usize = 9;
pub const MAX_ASPECT: f64 = 10.0;

/// The element categories that receive a one-hot slot, in slot order.
///
/// Fixed when a corpus is built and persisted with the model so that feature
/// layouts stay reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeVocabulary {
    types: Vec<ElementType>,
}

impl Default for TypeVocabulary {
    fn default() -> Self {
        use ElementType::*;
        TypeVocabulary {
            types: vec![Label, Button, TextBox, Icon, Links, Dropdown, CheckBox, MenuItem, Table],
        }
    }
}

impl TypeVocabulary {
    pub fn new(types: Vec<ElementType>) -> Result<Self, String> {
        if types.len() > ONEHOT_SLOTS {
            return Err(format!("at most {ONEHOT_SLOTS} one-hot types, got {}", types.len()));
        }
        let mut seen = [false; NUM_ELEMENT_TYPES];
        for t in &types {
            if std::mem::replace(&mut seen[t.index()], true) {
                return Err(format!("duplicate type {t} in vocabulary"));
            }
        }
        Ok(TypeVocabulary { types })
    }

    /// The nine most frequent types, ties broken by name.
    pub fn from_counts(counts: &[u64; NUM_ELEMENT_TYPES]) -> Self {
        let mut ranked: Vec<ElementType> = ElementType::ALL.to_vec();
        ranked.sort_by(|a, b| counts[b.index()].cmp(&counts[a.index()]).then(a.name().cmp(b.name())));
        ranked.truncate(ONEHOT_SLOTS);
        TypeVocabulary { types: ranked }
    }

    pub fn from_corpus<'a>(manifests: impl IntoIterator<Item = &'a DetectionManifest>) -> Self {
        let mut counts = [0u64; NUM_ELEMENT_TYPES];
        for m in manifests {
            for d in &m.elements {
                counts[d.elem_type.index()] += 1;
            }
        }
        Self::from_counts(&counts)
    }

    pub fn types(&self) -> &[ElementType] {
        &self.types
    }

    pub fn slot(&self, t: ElementType) -> Option<usize> {
        self.types.iter().position(|&x| x == t)
    }
}

/// Writes the 16-wide feature row of one element.
///
/// Layout: `cx/W, cy/H, w/W, h/H, area/(W·H), aspect/10, onehot[9], interactive`.
pub fn element_features<T: Scalar>(
    elem_type: ElementType,
    bbox: &BBox,
    dims: (f64, f64),
    vocab: &TypeVocabulary,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), FEATURE_DIM);
    let (w_screen, h_screen) = dims;
    let (cx, cy) = bbox.center();
    let (w, h) = (bbox.width(), bbox.height());
    let aspect = (w / h).clamp(0.0, MAX_ASPECT) / MAX_ASPECT;
    let spatial = [
        cx / w_screen,
        cy / h_screen,
        w / w_screen,
        h / h_screen,
        (w * h) / (w_screen * h_screen),
        aspect,
    ];
    for (o, v) in out.iter_mut().zip(spatial) {
        *o = T::lit(v);
    }
    for o in &mut out[6..6 + ONEHOT_SLOTS] {
        *o = T::zero();
    }
    if let Some(slot) = vocab.slot(elem_type) {
        out[6 + slot] = T::one();
    }
    out[FEATURE_DIM - 1] = if elem_type.is_interactive() { T::one() } else { T::zero() };
}

/// Feature matrix with one row per element, in manifest order.
pub fn extract_features<T: Scalar>(manifest: &DetectionManifest, vocab: &TypeVocabulary) -> Array2<T> {
    let dims = (manifest.width, manifest.height);
    let mut x = Array2::zeros((manifest.elements.len(), FEATURE_DIM));
    for (mut row, d) in x.rows_mut().into_iter().zip(&manifest.elements) {
        element_features(d.elem_type, &d.bbox, dims, vocab, row.as_slice_mut().expect("row contiguous"));
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::manifest::Detection;

    fn manifest(elements: Vec<(ElementType, BBox)>) -> DetectionManifest {
        DetectionManifest {
            screen_id: "t".into(),
            width: 1920.0,
            height: 1080.0,
            elements: elements
                .into_iter()
                .map(|(elem_type, bbox)| Detection { elem_type, bbox, confidence: 1.0, text: None })
                .collect(),
            visual_vec: None,
            intent_label: None,
        }
    }

    #[test]
    fn quarter_screen_button() {
        let m = manifest(vec![(ElementType::Button, BBox::new(0.0, 0.0, 960.0, 540.0))]);
        let x = extract_features::<f64>(&m, &TypeVocabulary::default());
        let r = x.row(0);
        assert_eq!([r[0], r[1], r[2], r[3], r[4]], [0.25, 0.25, 0.5, 0.5, 0.25]);
        // 960 / 540 = 1.777..., scaled by 1/10
        assert!((r[5] - (960.0f64 / 540.0) / 10.0).abs() < 1e-15);
        assert!((r[5] - 0.178).abs() < 1e-3);
        assert_eq!(r[15], 1.0);
        let slot = TypeVocabulary::default().slot(ElementType::Button).unwrap();
        assert_eq!(r[6 + slot], 1.0);
        assert_eq!(r.slice(ndarray::s![6..15]).sum(), 1.0);
    }

    #[test]
    fn full_screen_window() {
        let m = manifest(vec![(ElementType::Window, BBox::new(0.0, 0.0, 1920.0, 1080.0))]);
        let x = extract_features::<f64>(&m, &TypeVocabulary::default());
        let r = x.row(0);
        assert_eq!([r[0], r[1], r[2], r[3], r[4]], [0.5, 0.5, 1.0, 1.0, 1.0]);
        assert_eq!(r[15], 0.0);
    }

    #[test]
    fn unencoded_type_has_zero_onehot() {
        let vocab = TypeVocabulary::default();
        assert!(vocab.slot(ElementType::DatePicker).is_none());
        let m = manifest(vec![(ElementType::DatePicker, BBox::new(10.0, 10.0, 110.0, 60.0))]);
        let x = extract_features::<f64>(&m, &vocab);
        assert_eq!(x.row(0).slice(ndarray::s![6..15]).sum(), 0.0);
        assert_eq!(x[[0, 15]], 1.0);
        assert_eq!(x[[0, 2]], 100.0 / 1920.0);
    }

    #[test]
    fn tall_and_wide_aspects_stay_in_range() {
        let m = manifest(vec![
            (ElementType::Label, BBox::new(0.0, 0.0, 1900.0, 2.0)),
            (ElementType::Label, BBox::new(0.0, 0.0, 2.0, 1000.0)),
        ]);
        let x = extract_features::<f32>(&m, &TypeVocabulary::default());
        assert_eq!(x[[0, 5]], 1.0);
        assert!(x[[1, 5]] > 0.0 && x[[1, 5]] < 0.001);
    }

    #[test]
    fn vocabulary_ranks_by_frequency_then_name() {
        let mut counts = [0u64; NUM_ELEMENT_TYPES];
        counts[ElementType::Window.index()] = 50;
        counts[ElementType::Table.index()] = 10;
        counts[ElementType::Button.index()] = 10;
        let v = TypeVocabulary::from_counts(&counts);
        assert_eq!(v.types()[0], ElementType::Window);
        assert_eq!(v.types()[1], ElementType::Button);
        assert_eq!(v.types()[2], ElementType::Table);
        // zero-count remainder alphabetical: CheckBox, DatePicker, Dropdown, ...
        assert_eq!(v.types()[3], ElementType::CheckBox);
        assert_eq!(v.types().len(), 9);
        assert!(TypeVocabulary::new(vec![ElementType::Icon, ElementType::Icon]).is_err());
    }
}
