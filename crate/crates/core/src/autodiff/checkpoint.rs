//! `u64` little-endian header length, JSON header, then every tensor as
//! little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{AdamConfig, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub kind: ParamKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub step: u64,
    pub adam: AdamConfig,
    /// Model configuration the tensors belong to; opaque to this module.
    pub model: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore<f32>,
}

pub fn encode_checkpoint(
    store: &ParamStore<f32>,
    adam: &AdamConfig,
    model: serde_json::Value,
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        step: store.step(),
        adam: *adam,
        model,
        tensors: store
            .iter()
            .map(|(name, m, kind)| TensorEntry {
                name: name.to_string(),
                shape: [m.rows(), m.cols()],
                kind,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(8 + json.len());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, m, _) in store.iter() {
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |detail: String| Error::Format {
        what: "checkpoint",
        detail,
    };
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| bad("missing header length".into()))?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(8..8usize.saturating_add(len))
        .ok_or_else(|| bad(format!("header length {len} exceeds file")))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut rest = &bytes[8 + len..];
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let n = t.shape[0] * t.shape[1];
        if rest.len() < n * 4 {
            return Err(bad(format!("tensor {} truncated", t.name)));
        }
        let data = rest[..n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        rest = &rest[n * 4..];
        store.insert(
            t.name.clone(),
            Matrix::from_vec(t.shape[0], t.shape[1], data)?,
            t.kind,
        )?;
    }
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    store.set_step(header.step);
    Ok(Checkpoint { header, store })
}

pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore<f32>,
    adam: &AdamConfig,
    model: serde_json::Value,
) -> Result<()> {
    let bytes = encode_checkpoint(store, adam, model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
