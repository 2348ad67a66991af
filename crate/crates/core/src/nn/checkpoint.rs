//! Checkpoint archive.
//!
//! Layout: the magic `FLOWCKPT1`, an 8-byte little-endian length, a JSON
//! index of that length, then a blob of little-endian f64 values. The index
//! records the format version, the model config and `{name, shape, offset}`
//! for every tensor, with offsets in bytes from the start of the blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::model::{Model, ModelConfig};
use super::params::ParamStore;

pub const MAGIC: &[u8; 9] = b"FLOWCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Index {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut blob = Vec::with_capacity(model.params().n_scalars() * 8);
    let mut tensors = Vec::with_capacity(model.params().len());
    for (name, m) in model.params().iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: vec![m.rows(), m.cols()],
            offset: blob.len() as u64,
        });
        for x in m.as_slice() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let index = Index {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        tensors,
    };
    let json = serde_json::to_vec(&index).expect("index serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
    let index_len = u64::from_le_bytes(len_bytes) as usize;
    let start = MAGIC.len() + 8;
    let blob_start = start
        .checked_add(index_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated index".into()))?;
    let index: Index =
        serde_json::from_slice(&bytes[start..blob_start]).map_err(|e| bad(e.to_string()))?;
    if index.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {}",
            index.format_version
        )));
    }
    let blob = &bytes[blob_start..];
    let mut store = ParamStore::new();
    for t in &index.tensors {
        let [rows, cols] = t.shape[..] else {
            return Err(bad(format!("tensor {} is not 2-D", t.name)));
        };
        let count = rows * cols;
        let begin = t.offset as usize;
        let end = begin + count * 8;
        if end > blob.len() {
            return Err(bad(format!(
                "tensor {} runs past the end of the blob",
                t.name
            )));
        }
        let data = blob[begin..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(t.name.clone(), Matrix::from_vec(rows, cols, data)?)?;
    }
    Model::from_parts(index.config, store)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
