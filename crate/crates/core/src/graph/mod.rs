//! Attributed spatial graphs built from detection manifests.

mod edges;
mod element;
mod features;
mod manifest;

use ndarray::Array2;

pub use edges::{
    center_distance, distance_threshold, edge_criterion, edge_weight, iou, DISTANCE_FRACTION, IOU_THRESHOLD,
    WEIGHT_DISTANCE, WEIGHT_IOU, WEIGHT_TYPE,
};
pub use element::{ElementType, UnknownElementType, NUM_ELEMENT_TYPES};
pub use features::{element_features, extract_features, TypeVocabulary, FEATURE_DIM, ONEHOT_SLOTS};
pub use manifest::{
    load_manifest, load_manifest_with, BBox, Detection, DetectionManifest, LoadOptions, ManifestError,
    DEFAULT_CONFIDENCE_THRESHOLD, SCHEMA_VERSION,
};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub elem_type: ElementType,
    pub bbox: BBox,
    pub text: String,
}

/// Undirected weighted edge, stored once with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub i: usize,
    pub j: usize,
    pub weight: T,
}

/// One screen as an attributed graph: nodes, a `|V|×16` feature matrix and a
/// symmetric weighted adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct UiGraph<T> {
    pub screen_id: String,
    pub nodes: Vec<Node>,
    pub features: Array2<T>,
    pub adjacency: Array2<T>,
    pub edges: Vec<Edge<T>>,
    pub dims: (f64, f64),
    pub intent_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("screen `{0}` has no elements")]
    Empty(String),
}

/// Builds the graph for one manifest. Nodes keep manifest order.
pub fn build_graph<T: Scalar>(manifest: &DetectionManifest, vocab: &TypeVocabulary) -> Result<UiGraph<T>, GraphError> {
    if manifest.elements.is_empty() {
        return Err(GraphError::Empty(manifest.screen_id.clone()));
    }
    let dims = (manifest.width, manifest.height);
    let nodes: Vec<Node> = manifest
        .elements
        .iter()
        .enumerate()
        .map(|(id, d)| Node {
            id,
            elem_type: d.elem_type,
            bbox: d.bbox,
            text: match (&d.text, d.elem_type.carries_text()) {
                (Some(t), true) => t.clone(),
                _ => d.elem_type.name().to_string(),
            },
        })
        .collect();

    let n = nodes.len();
    let mut adjacency = Array2::zeros((n, n));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if edge_criterion(&nodes[i], &nodes[j], dims) {
                let w = T::lit(edge_weight(&nodes[i], &nodes[j], dims));
                adjacency[[i, j]] = w;
                adjacency[[j, i]] = w;
                edges.push(Edge { i, j, weight: w });
            }
        }
    }

    Ok(UiGraph {
        screen_id: manifest.screen_id.clone(),
        nodes,
        features: extract_features(manifest, vocab),
        adjacency,
        edges,
        dims,
        intent_label: manifest.intent_label.clone(),
    })
}

impl<T: Scalar> UiGraph<T> {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// `2|E| / (|V|(|V|-1))`, zero for a single node.
    pub fn density(&self) -> f64 {
        let n = self.num_nodes();
        if n < 2 {
            return 0.0;
        }
        2.0 * self.num_edges() as f64 / (n as f64 * (n as f64 - 1.0))
    }

    pub fn interactive_fraction(&self) -> f64 {
        let k = self.nodes.iter().filter(|n| n.elem_type.is_interactive()).count();
        k as f64 / self.num_nodes().max(1) as f64
    }

    /// Bitmask of the element types present.
    pub fn type_mask(&self) -> u16 {
        self.nodes.iter().fold(0u16, |m, n| m | (1 << n.elem_type.index()))
    }

    /// Applies a node relabeling: node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> UiGraph<T> {
        assert_eq!(perm.len(), self.num_nodes());
        let n = perm.len();
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let nodes = perm
            .iter()
            .enumerate()
            .map(|(new, &old)| Node { id: new, ..self.nodes[old].clone() })
            .collect();
        let features = Array2::from_shape_fn((n, FEATURE_DIM), |(r, c)| self.features[[perm[r], c]]);
        let adjacency = Array2::from_shape_fn((n, n), |(r, c)| self.adjacency[[perm[r], perm[c]]]);
        let mut edges: Vec<Edge<T>> = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (inverse[e.i], inverse[e.j]);
                Edge { i: a.min(b), j: a.max(b), weight: e.weight }
            })
            .collect();
        edges.sort_by_key(|e| (e.i, e.j));
        UiGraph {
            screen_id: self.screen_id.clone(),
            nodes,
            features,
            adjacency,
            edges,
            dims: self.dims,
            intent_label: self.intent_label.clone(),
        }
    }
}
