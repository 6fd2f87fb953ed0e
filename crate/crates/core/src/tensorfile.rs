//! Windows tensor files: raw little-endian `f32`, row-major `[n_windows, C, S]`,
//! next to a JSON sidecar describing shape, labels and provenance.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{create_file, read_json, write_json};

pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowsSidecar {
    pub shape: [usize; 3],
    pub dtype: String,
    pub labels: Vec<u8>,
    pub delta_ms: u32,
    pub partition: Partition,
    #[serde(default)]
    pub session_id: String,
    #[serde(default)]
    pub channels: Vec<String>,
    #[serde(default)]
    pub start_t_ns: Vec<u64>,
    /// Per-window source sample indices as half-open `[start, end)` runs.
    #[serde(default)]
    pub provenance: Vec<Vec<[usize; 2]>>,
    /// Per-class window counts before oversampling (train partition only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_counts_pre_oversample: Option<[usize; 5]>,
    #[serde(default)]
    pub absent_classes: Vec<u8>,
}

/// Sidecar path for a tensor file: `x.f32` -> `x.json`.
pub fn sidecar_path(tensor: &Path) -> PathBuf {
    tensor.with_extension("json")
}

pub fn write_f32_blob(path: &Path, data: &[f32]) -> Result<()> {
    let mut w = create_file(path)?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn decode_f32le(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "f32 blob length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_windows(path: &Path, data: &[f32], sidecar: &WindowsSidecar) -> Result<()> {
    let expected: usize = sidecar.shape.iter().product();
    if data.len() != expected || sidecar.labels.len() != sidecar.shape[0] {
        return Err(Error::Shape(format!(
            "{} values / {} labels for shape {:?}",
            data.len(),
            sidecar.labels.len(),
            sidecar.shape
        )));
    }
    write_f32_blob(path, data)?;
    write_json(&sidecar_path(path), sidecar)
}

pub fn read_windows(path: &Path) -> Result<(Vec<f32>, WindowsSidecar)> {
    let sidecar: WindowsSidecar = read_json(&sidecar_path(path))?;
    if sidecar.dtype != DTYPE_F32LE {
        return Err(Error::Data(format!("unsupported dtype {}", sidecar.dtype)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let data = decode_f32le(&bytes)?;
    let expected: usize = sidecar.shape.iter().product();
    if data.len() != expected || sidecar.labels.len() != sidecar.shape[0] {
        return Err(Error::Shape(format!(
            "{}: {} values / {} labels for shape {:?}",
            path.display(),
            data.len(),
            sidecar.labels.len(),
            sidecar.shape
        )));
    }
    Ok((data, sidecar))
}

/// Compress a sorted index list into half-open runs.
pub fn index_runs(indices: &[usize]) -> Vec<[usize; 2]> {
    let mut runs: Vec<[usize; 2]> = Vec::new();
    for &i in indices {
        match runs.last_mut() {
            Some(r) if r[1] == i => r[1] += 1,
            _ => runs.push([i, i + 1]),
        }
    }
    runs
}

pub fn expand_runs(runs: &[[usize; 2]]) -> Vec<usize> {
    runs.iter().flat_map(|r| r[0]..r[1]).collect()
}
