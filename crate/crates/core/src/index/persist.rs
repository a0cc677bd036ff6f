//! Binary index files.
//!
//! ```text
//! magic "SGIX" | u32 version | u8 metric | u32 dim | u32 n
//! ids:        (u32 len, utf-8) × n
//! manifests:  (u32 len, json) × n
//! structural: f32 × n·dim      semantic: f32 × n·dim
//! visual:     u8 present, [u32 vdim, f32 × n·vdim, u8 flag × n]
//! intents:    u32 K, (u32 len, utf-8) × K, f32 × n·K
//! metadata:   u32 × 15 × n
//! ann:        u8 present, [u32 nlist, f32 centroids, f32 min × dim,
//!             f32 scale × dim, (u32 len, u32 pos × len) × nlist, u8 residual codes × n·dim]
//! u32 CRC-32 of everything above
//! ```
//!
//! Integers and floats are little-endian.

use std::collections::HashMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::hybrid::HybridIndex;
use super::ivf::{Codebook, IvfIndex};
use super::metadata::{MetadataIndex, TypeCounts};
use super::vector::{FlatIndex, Metric};
use super::IndexError;
use crate::graph::{load_manifest_with, LoadOptions, NUM_ELEMENT_TYPES};

const MAGIC: &[u8; 4] = b"SGIX";
pub const INDEX_VERSION: u32 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LE>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for &x in xs {
        out.write_f32::<LE>(x).unwrap();
    }
}

pub fn encode_index(idx: &HybridIndex) -> Vec<u8> {
    let mut out = Vec::new();
    let n = idx.len();
    let dim = idx.structural.dim();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(INDEX_VERSION).unwrap();
    out.write_u8(idx.metric().code()).unwrap();
    out.write_u32::<LE>(dim as u32).unwrap();
    out.write_u32::<LE>(n as u32).unwrap();
    for id in &idx.ids {
        put_str(&mut out, id);
    }
    for m in &idx.manifests {
        put_str(&mut out, &m.to_json());
    }
    put_f32s(&mut out, idx.structural.raw());
    put_f32s(&mut out, idx.semantic.raw());
    match &idx.visual {
        None => out.write_u8(0).unwrap(),
        Some(v) => {
            out.write_u8(1).unwrap();
            out.write_u32::<LE>(v.dim() as u32).unwrap();
            put_f32s(&mut out, v.raw());
            out.extend(idx.visual_present.iter().map(|&b| b as u8));
        }
    }
    out.write_u32::<LE>(idx.intent_labels.len() as u32).unwrap();
    for l in &idx.intent_labels {
        put_str(&mut out, l);
    }
    put_f32s(&mut out, &idx.intent_probs);
    for c in idx.metadata.all_counts() {
        for &x in c {
            out.write_u32::<LE>(x).unwrap();
        }
    }
    match &idx.ann {
        None => out.write_u8(0).unwrap(),
        Some(a) => {
            out.write_u8(1).unwrap();
            out.write_u32::<LE>(a.nlist() as u32).unwrap();
            put_f32s(&mut out, a.centroids.as_slice().expect("standard layout"));
            put_f32s(&mut out, &a.codebook.min);
            put_f32s(&mut out, &a.codebook.scale);
            for l in &a.lists {
                out.write_u32::<LE>(l.len() as u32).unwrap();
                for &p in l {
                    out.write_u32::<LE>(p).unwrap();
                }
            }
            for pos in 0..a.len() as u32 {
                out.extend_from_slice(a.code(pos));
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.write_u32::<LE>(crc).unwrap();
    out
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bad(what: &str) -> IndexError {
        IndexError::Format(format!("malformed {what}"))
    }

    fn u8(&mut self, what: &str) -> Result<u8, IndexError> {
        self.0.read_u8().map_err(|_| Self::bad(what))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IndexError> {
        self.0.read_u32::<LE>().map_err(|_| Self::bad(what))
    }

    fn remaining(&self) -> usize {
        self.0.get_ref().len() - self.0.position() as usize
    }

    fn len(&mut self, what: &str, elem: usize) -> Result<usize, IndexError> {
        let n = self.u32(what)? as usize;
        if n.saturating_mul(elem) > self.remaining() {
            return Err(Self::bad(what));
        }
        Ok(n)
    }

    fn string(&mut self, what: &str) -> Result<String, IndexError> {
        let n = self.len(what, 1)?;
        let mut b = vec![0; n];
        self.0.read_exact(&mut b).map_err(|_| Self::bad(what))?;
        String::from_utf8(b).map_err(|_| Self::bad(what))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, IndexError> {
        if n.saturating_mul(4) > self.remaining() {
            return Err(Self::bad(what));
        }
        let mut v = vec![0f32; n];
        self.0.read_f32_into::<LE>(&mut v).map_err(|_| Self::bad(what))?;
        Ok(v)
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, IndexError> {
        let mut b = vec![0; n];
        self.0.read_exact(&mut b).map_err(|_| Self::bad(what))?;
        Ok(b)
    }
}

pub fn decode_index(bytes: &[u8]) -> Result<HybridIndex, IndexError> {
    if bytes.len() < 12 {
        return Err(IndexError::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(IndexError::Checksum);
    }
    if &body[..4] != MAGIC {
        return Err(IndexError::Format("not an index file".into()));
    }
    let mut r = Reader(Cursor::new(&body[4..]));
    let version = r.u32("version")?;
    if version != INDEX_VERSION {
        return Err(IndexError::Version { found: version, expected: INDEX_VERSION });
    }
    let metric = Metric::from_code(r.u8("metric")?).ok_or_else(|| Reader::bad("metric"))?;
    let dim = r.u32("dim")? as usize;
    if dim != super::EMBED_DIM {
        return Err(IndexError::Dimension { expected: super::EMBED_DIM, got: dim });
    }
    let n = r.len("count", 8)?;
    let ids = (0..n).map(|_| r.string("id")).collect::<Result<Vec<_>, _>>()?;
    let manifests = (0..n)
        .map(|_| {
            let s = r.string("manifest")?;
            load_manifest_with(s.as_bytes(), LoadOptions { confidence_threshold: f64::NEG_INFINITY })
                .map_err(|e| IndexError::Format(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let structural = FlatIndex::from_raw(metric, dim, r.f32s(n * dim, "structural rows")?);
    let semantic = FlatIndex::from_raw(Metric::Cosine, dim, r.f32s(n * dim, "semantic rows")?);
    let (visual, visual_present) = match r.u8("visual flag")? {
        0 => (None, vec![false; n]),
        _ => {
            let vdim = r.u32("visual dim")? as usize;
            let rows = r.f32s(n * vdim, "visual rows")?;
            let flags = r.bytes(n, "visual flags")?.into_iter().map(|b| b != 0).collect();
            (Some(FlatIndex::from_raw(Metric::Cosine, vdim, rows)), flags)
        }
    };
    let k = r.len("intent count", 4)?;
    let intent_labels = (0..k).map(|_| r.string("intent label")).collect::<Result<Vec<_>, _>>()?;
    let intent_probs = r.f32s(n * k, "intent probabilities")?;
    let mut counts = Vec::with_capacity(n);
    for _ in 0..n {
        let mut c: TypeCounts = [0; NUM_ELEMENT_TYPES];
        for x in c.iter_mut() {
            *x = r.u32("counts")?;
        }
        counts.push(c);
    }
    let ann = match r.u8("ann flag")? {
        0 => None,
        _ => {
            let nlist = r.len("nlist", dim * 4)?;
            let centroids = Array2::from_shape_vec((nlist, dim), r.f32s(nlist * dim, "centroids")?)
                .map_err(|_| Reader::bad("centroids"))?;
            let codebook = Codebook { min: r.f32s(dim, "codebook")?, scale: r.f32s(dim, "codebook")? };
            let mut lists = Vec::with_capacity(nlist);
            for _ in 0..nlist {
                let len = r.len("posting list", 4)?;
                let l = (0..len).map(|_| r.u32("posting")).collect::<Result<Vec<_>, _>>()?;
                if l.iter().any(|&p| p as usize >= n) {
                    return Err(Reader::bad("posting list"));
                }
                lists.push(l);
            }
            let codes = r.bytes(n * dim, "codes")?;
            Some(IvfIndex::from_parts(metric, centroids, codebook, lists, &codes).ok_or_else(|| Reader::bad("posting list"))?)
        }
    };
    if r.remaining() != 0 {
        return Err(Reader::bad("trailer"));
    }
    let positions: HashMap<String, u32> = ids.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    if positions.len() != n {
        return Err(Reader::bad("id table"));
    }
    Ok(HybridIndex {
        ids,
        positions,
        manifests,
        structural,
        semantic,
        visual,
        visual_present,
        intent_labels,
        intent_probs,
        metadata: MetadataIndex::from_counts(counts),
        ann,
    })
}

/// Writes atomically: the file is written beside `path` and renamed over it.
pub fn save_index(idx: &HybridIndex, path: impl AsRef<Path>) -> Result<(), IndexError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_index(idx)).map_err(|e| IndexError::Io(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| IndexError::Io(e.to_string()))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<HybridIndex, IndexError> {
    let bytes = std::fs::read(path).map_err(|e| IndexError::Io(e.to_string()))?;
    decode_index(&bytes)
}
