//! Checkpoint file: u64 little-endian header length, JSON header, then every
//! tensor as little-endian f32 in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec, Tensor, N_CLASSES};
use crate::error::{Error, Result};
use crate::ingest::create_file;
use crate::tensorfile::decode_f32le;

const MAGIC: &str = "bcv-bench-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: ModelSpec,
    seed: u64,
    delta_ms: u32,
    class_weights: [f64; N_CLASSES],
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub delta_ms: u32,
    pub class_weights: [f64; N_CLASSES],
    pub params: ModelParams<f32>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        format: MAGIC.into(),
        version: 1,
        spec: ckpt.spec.clone(),
        seed: ckpt.seed,
        delta_ms: ckpt.delta_ms,
        class_weights: ckpt.class_weights,
        tensors: ckpt
            .params
            .tensors
            .iter()
            .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let mut buf = Vec::with_capacity(8 + json.len() + 4 * ckpt.params.n_params());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &ckpt.params.tensors {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = create_file(path)?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    if bytes.len() < 8 {
        return Err(corrupt("truncated checkpoint"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(8..8 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;
    if header.format != MAGIC || header.version != 1 {
        return Err(corrupt("not a version-1 checkpoint"));
    }
    header.spec.validate()?;
    let values = decode_f32le(&bytes[8 + hlen..])?;
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let data = values
            .get(offset..offset + n)
            .ok_or_else(|| corrupt("tensor blob shorter than header declares"))?
            .to_vec();
        offset += n;
        tensors.push(Tensor { name: e.name.clone(), shape: e.shape.clone(), data });
    }
    if offset != values.len() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    let params = ModelParams { tensors };
    params.check(&header.spec)?;
    Ok(Checkpoint {
        spec: header.spec,
        seed: header.seed,
        delta_ms: header.delta_ms,
        class_weights: header.class_weights,
        params,
    })
}
