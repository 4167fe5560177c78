//! Named `f64` matrices stored as little-endian `f32` blobs with a JSON index.

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the blob in `f32` elements.
    pub offset: usize,
}

pub fn push_f32(blob: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn read_f32(blob: &[u8], offset: usize, len: usize) -> Result<Vec<f64>> {
    let end = (offset + len) * 4;
    if end > blob.len() {
        return Err(Error::DataIntegrity(format!(
            "blob holds {} floats, need {}",
            blob.len() / 4,
            offset + len
        )));
    }
    Ok(blob[offset * 4..end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

/// Rounds through `f32`, the precision every file in this crate stores.
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

pub fn encode<'a>(arrays: impl IntoIterator<Item = (&'a str, &'a Mat)>) -> (Vec<ArrayEntry>, Vec<u8>) {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, m) in arrays {
        entries.push(ArrayEntry {
            name: name.to_string(),
            shape: [m.nrows(), m.ncols()],
            offset: blob.len() / 4,
        });
        push_f32(&mut blob, m.iter().copied());
    }
    (entries, blob)
}

/// Decodes every entry, checking that they tile the blob exactly.
pub fn decode(entries: &[ArrayEntry], blob: &[u8]) -> Result<Vec<(String, Mat)>> {
    let total: usize = entries.iter().map(|e| e.shape[0] * e.shape[1]).sum();
    if total * 4 != blob.len() {
        return Err(Error::DataIntegrity(format!(
            "blob has {} bytes but its index describes {}",
            blob.len(),
            total * 4
        )));
    }
    entries
        .iter()
        .map(|e| {
            let values = read_f32(blob, e.offset, e.shape[0] * e.shape[1])?;
            let m = Mat::from_shape_vec((e.shape[0], e.shape[1]), values)
                .map_err(|err| Error::DataIntegrity(err.to_string()))?;
            Ok((e.name.clone(), m))
        })
        .collect()
}
