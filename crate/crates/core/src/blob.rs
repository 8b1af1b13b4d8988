//! Flat little-endian binary blobs used by every on-disk format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f32(&bytes).ok_or_else(|| Error::Format {
        what: "f32 blob",
        detail: format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        ),
    })
}

pub fn decode_f32(bytes: &[u8]) -> Option<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

pub fn write_u8(path: &Path, values: &[u8]) -> Result<()> {
    fs::write(path, values).map_err(|e| Error::io(path, e))
}

pub fn read_u8(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn flatten3(rows: &[[f32; 3]]) -> Vec<f32> {
    rows.iter().flat_map(|r| r.iter().copied()).collect()
}

pub fn unflatten3(values: &[f32], what: &'static str) -> Result<Vec<[f32; 3]>> {
    if values.len() % 3 != 0 {
        return Err(Error::Format {
            what,
            detail: format!("{} floats is not a multiple of 3", values.len()),
        });
    }
    Ok(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}
