//! Hybrid vector and metadata index.

mod embed;
mod hybrid;
mod ivf;
mod kmeans;
mod metadata;
mod persist;
mod vector;

pub use embed::{tokenize, HashedEmbedder, PrecomputedEmbedder, SemEmbedder};
pub use hybrid::{HybridIndex, IndexEntry};
pub use ivf::{Codebook, IvfIndex};
pub use kmeans::{kmeans, KMeans, KMEANS_ITERS};
pub use metadata::{complement, intersect, CountOp, MetaPredicate, MetadataIndex, PosSet, TypeCounts, TypeSel};
pub use persist::{decode_index, encode_index, load_index, save_index, INDEX_VERSION};
pub use vector::{compare, normalized, top_k, FlatIndex, Metric, Scored};

use serde::{Deserialize, Serialize};

/// Width of stored structural and semantic vectors.
pub const EMBED_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("screen id {0:?} is already indexed")]
    DuplicateId(String),
    #[error("unknown screen id {0:?}")]
    UnknownId(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("vector has non-finite components")]
    NonFinite,
    #[error("index is empty")]
    Empty,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("nprobe {nprobe} outside 1..={nlist}")]
    InvalidNprobe { nprobe: usize, nlist: usize },
    #[error("no approximate index has been built")]
    NoAnn,
    #[error("malformed bounds: {lo} > {hi}")]
    MalformedBounds { lo: u32, hi: u32 },
    #[error("no precomputed embedding for text {0:?}")]
    UnknownText(String),
    #[error("index file version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("index file checksum mismatch")]
    Checksum,
    #[error("index file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub n: usize,
    pub dim: usize,
    pub dense_families: usize,
    /// `n · dim · 4` bytes of `f32` per dense family.
    pub dense_bytes_per_family: usize,
    pub dense_bytes: usize,
    /// `n · dim` bytes of 8-bit codes for one quantized family.
    pub quantized_bytes: usize,
    /// Code bytes actually held by a built approximate index.
    pub quantized_built: Option<usize>,
}

/// Storage of `n` vectors of width `dim` across `dense_families` float families.
pub fn report_memory(n: usize, dim: usize, dense_families: usize) -> MemoryReport {
    let per = n * dim * std::mem::size_of::<f32>();
    MemoryReport {
        n,
        dim,
        dense_families,
        dense_bytes_per_family: per,
        dense_bytes: per * dense_families,
        quantized_bytes: n * dim,
        quantized_built: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_formula() {
        let r = report_memory(20_000, 128, 2);
        assert_eq!(r.dense_bytes, 20_480_000);
        assert_eq!(r.dense_bytes_per_family, 4 * r.quantized_bytes);
    }
}
