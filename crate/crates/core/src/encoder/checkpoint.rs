//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SGCK" | u32 version
//! config: u32 in_dim, hidden, heads, gcn_out, proj_in, proj_hidden, proj_out
//!         f64 dropout | u32 num_intents | u64 seed
//! vocab:  u8 count, u8 type index × count
//! labels: u32 count, (u32 len, utf-8 bytes) × count
//! tensors: u32 count, (u32 name len, name, u64 len, f32 × len) × count
//! optimizer: u8 present, [u64 step, f32 moments m then v per tensor]
//! u32 CRC-32 of everything above
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::config::EncoderConfig;
use super::model::{EncoderModel, EncoderParams};
use super::EncoderError;
use crate::graph::{ElementType, TypeVocabulary};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SGCK";
const VERSION: u32 = 1;

/// First and second moment estimates of AdamW, one vector per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

fn corrupt(msg: impl Into<String>) -> EncoderError {
    EncoderError::Checkpoint(msg.into())
}

pub fn encode_checkpoint<T: Scalar>(model: &EncoderModel<T>, optimizer: Option<&OptimizerSnapshot>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.write_u32::<LE>(VERSION).unwrap();
    let c = &model.config;
    for v in [c.in_dim, c.hidden, c.heads, c.gcn_out, c.proj_dims.0, c.proj_dims.1, c.proj_dims.2] {
        b.write_u32::<LE>(v as u32).unwrap();
    }
    b.write_f64::<LE>(c.dropout).unwrap();
    b.write_u32::<LE>(c.num_intents as u32).unwrap();
    b.write_u64::<LE>(c.seed).unwrap();

    b.write_u8(model.vocab.types().len() as u8).unwrap();
    for t in model.vocab.types() {
        b.write_u8(t.index() as u8).unwrap();
    }
    b.write_u32::<LE>(model.intent_labels.len() as u32).unwrap();
    for l in &model.intent_labels {
        b.write_u32::<LE>(l.len() as u32).unwrap();
        b.extend_from_slice(l.as_bytes());
    }

    let tensors = model.params.tensors();
    b.write_u32::<LE>(tensors.len() as u32).unwrap();
    for (name, data) in &tensors {
        b.write_u32::<LE>(name.len() as u32).unwrap();
        b.extend_from_slice(name.as_bytes());
        b.write_u64::<LE>(data.len() as u64).unwrap();
        for v in data.iter() {
            b.write_f32::<LE>(v.as_f32()).unwrap();
        }
    }

    match optimizer {
        None => b.write_u8(0).unwrap(),
        Some(opt) => {
            b.write_u8(1).unwrap();
            b.write_u64::<LE>(opt.step).unwrap();
            for moments in [&opt.m, &opt.v] {
                for t in moments {
                    for &v in t {
                        b.write_f32::<LE>(v).unwrap();
                    }
                }
            }
        }
    }
    let crc = crc32fast::hash(&b);
    b.write_u32::<LE>(crc).unwrap();
    b
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(EncoderModel<T>, Option<OptimizerSnapshot>), EncoderError> {
    if bytes.len() < 12 {
        return Err(corrupt("file too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if &body[..4] != MAGIC {
        return Err(corrupt("bad magic; not a model checkpoint"));
    }
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch (truncated or corrupted file)"));
    }
    let mut r = Cursor::new(&body[4..]);
    let io = |e: std::io::Error| corrupt(e.to_string());
    let version = r.read_u32::<LE>().map_err(io)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.read_u32::<LE>().map_err(io)? as usize;
    }
    let dropout = r.read_f64::<LE>().map_err(io)?;
    let num_intents = r.read_u32::<LE>().map_err(io)? as usize;
    let seed = r.read_u64::<LE>().map_err(io)?;
    let config = EncoderConfig {
        in_dim: dims[0],
        hidden: dims[1],
        heads: dims[2],
        gcn_out: dims[3],
        proj_dims: (dims[4], dims[5], dims[6]),
        dropout,
        num_intents,
        seed,
    };
    config.validate()?;

    let nv = r.read_u8().map_err(io)? as usize;
    let mut types = Vec::with_capacity(nv);
    for _ in 0..nv {
        let i = r.read_u8().map_err(io)? as usize;
        types.push(ElementType::from_index(i).ok_or_else(|| corrupt(format!("bad type index {i}")))?);
    }
    let vocab = TypeVocabulary::new(types).map_err(corrupt)?;
    let nl = r.read_u32::<LE>().map_err(io)? as usize;
    let mut intent_labels = Vec::with_capacity(nl);
    for _ in 0..nl {
        intent_labels.push(read_string(&mut r)?);
    }

    let mut params = EncoderParams::<T>::zeros(&config);
    let count = r.read_u32::<LE>().map_err(io)? as usize;
    let expected = params.tensors().len();
    if count != expected {
        return Err(corrupt(format!("{count} tensors stored, model has {expected}")));
    }
    let mut err = None;
    params.visit_mut(|name, dst| {
        if err.is_some() {
            return;
        }
        let res = (|| {
            let stored_name = read_string(&mut r)?;
            if stored_name != name {
                return Err(corrupt(format!("expected tensor {name}, found {stored_name}")));
            }
            let len = r.read_u64::<LE>().map_err(io)? as usize;
            if len != dst.len() {
                return Err(corrupt(format!("tensor {name}: {len} values stored, shape needs {}", dst.len())));
            }
            for d in dst.iter_mut() {
                *d = T::of_f32(r.read_f32::<LE>().map_err(io)?);
            }
            Ok(())
        })();
        if let Err(e) = res {
            err = Some(e);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }

    let optimizer = match r.read_u8().map_err(io)? {
        0 => None,
        1 => {
            let step = r.read_u64::<LE>().map_err(io)?;
            let lens: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
            let mut read_moments = || -> Result<Vec<Vec<f32>>, EncoderError> {
                lens.iter()
                    .map(|&len| {
                        let mut v = vec![0f32; len];
                        r.read_f32_into::<LE>(&mut v).map_err(io)?;
                        Ok(v)
                    })
                    .collect()
            };
            let m = read_moments()?;
            let v = read_moments()?;
            Some(OptimizerSnapshot { step, m, v })
        }
        f => return Err(corrupt(format!("bad optimizer flag {f}"))),
    };
    if (r.position() as usize) != body.len() - 4 {
        return Err(corrupt("trailing bytes after checkpoint payload"));
    }
    if intent_labels.len() != config.num_intents {
        return Err(corrupt("intent label count does not match config"));
    }
    Ok((EncoderModel { config, vocab, intent_labels, params }, optimizer))
}

fn read_string(r: &mut Cursor<&[u8]>) -> Result<String, EncoderError> {
    let len = r.read_u32::<LE>().map_err(|e| corrupt(e.to_string()))? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| corrupt(e.to_string()))?;
    String::from_utf8(buf).map_err(|_| corrupt("non-utf8 string"))
}

pub fn save_checkpoint<T: Scalar>(
    model: &EncoderModel<T>,
    optimizer: Option<&OptimizerSnapshot>,
    path: impl AsRef<Path>,
) -> Result<(), EncoderError> {
    std::fs::write(path, encode_checkpoint(model, optimizer)).map_err(|e| EncoderError::Io(e.to_string()))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(EncoderModel<T>, Option<OptimizerSnapshot>), EncoderError> {
    let bytes = std::fs::read(path).map_err(|e| EncoderError::Io(e.to_string()))?;
    decode_checkpoint(&bytes)
}
