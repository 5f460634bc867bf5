//! Container layout (all integers little-endian):
//!
//! ```text
//! 0      8 bytes   magic "NXCKPT01"
//! 8      u64       manifest length M
//! 16     M bytes   JSON manifest
//! 16+M   blob      f32 values of every parameter, at the manifest offsets
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{build, ArchSpec, ModelGraph, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const MAGIC: &[u8; 8] = b"NXCKPT01";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_FIXED: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture: ArchSpec,
    pub params: Vec<TensorEntry>,
    /// Free-form run information (epoch, accuracy, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Manifest {
    pub fn blob_len(&self) -> u64 {
        self.params.iter().map(|p| p.length).sum()
    }
}

/// Serializes the model into container bytes. Values are stored as f32.
pub fn encode_checkpoint<T: Float>(model: &ModelGraph<T>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut params = Vec::with_capacity(model.params.len());
    for (_, p) in model.params.iter() {
        let offset = blob.len() as u64;
        for v in p.value.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        params.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        architecture: model.spec().clone(),
        params,
        meta,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_FIXED + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save_checkpoint<T: Float>(model: &ModelGraph<T>, path: &Path, meta: serde_json::Value) -> Result<()> {
    fs::write(path, encode_checkpoint(model, meta)?)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Splits container bytes into manifest and blob after checking the header.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < HEADER_FIXED || &bytes[..8] != MAGIC {
        return Err(bad("missing NXCKPT01 header"));
    }
    let m = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(HEADER_FIXED..HEADER_FIXED.saturating_add(m))
        .ok_or_else(|| bad(format!("manifest of {m} bytes is truncated")))?;
    let value: serde_json::Value = serde_json::from_slice(json)?;
    let version = value["format_version"].as_u64();
    if version != Some(FORMAT_VERSION as u64) {
        return Err(bad(format!(
            "format version {version:?} does not match supported version {FORMAT_VERSION}"
        )));
    }
    if let Some(name) = value["architecture"]["variant"].as_str() {
        Variant::parse(name)?;
    }
    let manifest: Manifest = serde_json::from_value(value)?;
    Ok((manifest, &bytes[HEADER_FIXED + m..]))
}

/// Rebuilds the architecture from the manifest and fills in every parameter.
pub fn decode_checkpoint<T: Float>(bytes: &[u8]) -> Result<(ModelGraph<T>, Manifest)> {
    let (manifest, blob) = read_manifest(bytes)?;
    let mut model = build::<T>(&manifest.architecture, 0)?;
    if manifest.params.len() != model.params.len() {
        return Err(bad(format!(
            "manifest lists {} parameters, architecture has {}",
            manifest.params.len(),
            model.params.len()
        )));
    }
    for e in &manifest.params {
        if e.dtype != "f32" {
            return Err(bad(format!("parameter `{}`: unsupported dtype {}", e.name, e.dtype)));
        }
        let id = model
            .params
            .id_of(&e.name)
            .ok_or_else(|| bad(format!("parameter `{}` not in architecture", e.name)))?;
        let numel: usize = e.shape.iter().product();
        if model.params.value(id).shape() != e.shape.as_slice() || e.length != 4 * numel as u64 {
            return Err(bad(format!(
                "parameter `{}`: shape {:?} / {} bytes does not match {:?}",
                e.name,
                e.shape,
                e.length,
                model.params.value(id).shape()
            )));
        }
        let end = e.offset.checked_add(e.length).filter(|&end| end <= blob.len() as u64);
        let Some(end) = end else {
            return Err(bad(format!(
                "parameter `{}`: extent {}+{} exceeds blob of {} bytes",
                e.name,
                e.offset,
                e.length,
                blob.len()
            )));
        };
        let data: Vec<T> = blob[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        model.params.get_mut(id).value = Tensor::new(&e.shape, data)?;
    }
    if blob.len() as u64 != manifest.blob_len() {
        return Err(bad(format!(
            "blob has {} bytes, manifest accounts for {}",
            blob.len(),
            manifest.blob_len()
        )));
    }
    Ok((model, manifest))
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<(ModelGraph<T>, Manifest)> {
    decode_checkpoint(&fs::read(path)?)
}
