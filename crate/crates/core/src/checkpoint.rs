//! Weight checkpoint files.
//!
//! Layout:
//!
//! ```text
//! b"HSCKPT01" | manifest length (u64 LE) | manifest JSON | tensor data
//! ```
//!
//! The manifest lists every tensor as `(name, shape, offset)`, where
//! `offset` is the byte offset of its first value inside the data section.
//! Values are little-endian IEEE-754 binary64, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HSCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<ManifestEntry>,
    /// Free-form metadata (model configuration, normalization statistics).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode<T: Scalar>(tensors: &[(&str, &Tensor<T>)], meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut data = Vec::new();
    for (name, t) in tensors {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: data.len() as u64,
        });
        for v in t.data() {
            data.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        tensors: entries,
        meta,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Vec<(String, Tensor<T>)>, serde_json::Value)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + mlen)
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body)?;
    let data = &bytes[16 + mlen..];
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let chunk = data
            .get(start..start + 8 * n)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past end of file", e.name)))?;
        let vals = chunk
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        out.push((e.name, Tensor::new(e.shape, vals)?));
    }
    Ok((out, manifest.meta))
}

pub fn save_store<T: Scalar>(path: &Path, store: &ParamStore<T>, meta: serde_json::Value) -> Result<()> {
    let tensors: Vec<(&str, &Tensor<T>)> = store
        .iter()
        .map(|(_, p)| (p.name.as_str(), &p.tensor))
        .collect();
    let bytes = encode(&tensors, meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<(Vec<(String, Tensor<T>)>, serde_json::Value)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}
