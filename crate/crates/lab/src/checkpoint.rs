//! ICL-EBM checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "AMPCKPT1"
//! 8 bytes   u64 length L of the manifest
//! L bytes   UTF-8 JSON manifest
//! rest      every tensor's f64 values, little-endian, row-major, in manifest order
//! ```
//!
//! The manifest holds the model config, and for each tensor its name,
//! shape and offset (in values) into the data section.

use std::path::Path;

use amprob_core::iclebm::{IclEbmConfig, IclEbmModel};
use amprob_core::numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"AMPCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub config: IclEbmConfig,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance (training steps, seed and so on).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode(model: &IclEbmModel, meta: serde_json::Value) -> Result<Vec<u8>> {
    let shapes = model.config().param_shapes();
    let mut tensors = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for ((name, r, c), t) in shapes.into_iter().zip(model.params()) {
        tensors.push(TensorEntry { name, rows: r, cols: c, offset });
        offset += t.len();
    }
    let manifest = Manifest { format_version: 1, dtype: "f64".into(), config: *model.config(), tensors, meta };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(IclEbmModel, Manifest)> {
    let bad = |msg: String| LabError::Format { path: path.into(), msg };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not an amprob checkpoint (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format_version != 1 || manifest.dtype != "f64" {
        return Err(bad(format!("unsupported format {} / {}", manifest.format_version, manifest.dtype)));
    }
    let data = &bytes[16 + len..];
    if data.len() % 8 != 0 {
        return Err(bad("data section is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> =
        data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let want = manifest.config.param_shapes();
    if want.len() != manifest.tensors.len() {
        return Err(bad(format!("expected {} tensors, found {}", want.len(), manifest.tensors.len())));
    }
    let mut params = Vec::with_capacity(want.len());
    for ((name, r, c), e) in want.iter().zip(&manifest.tensors) {
        if (name, *r, *c) != (&e.name, e.rows, e.cols) {
            return Err(bad(format!("tensor {} has shape {}x{}, expected {name} {r}x{c}", e.name, e.rows, e.cols)));
        }
        let slice = values.get(e.offset..e.offset + r * c).ok_or_else(|| bad(format!("tensor {name} is truncated")))?;
        params.push(Tensor::matrix(*r, *c, slice.to_vec())?);
    }
    let total: usize = want.iter().map(|(_, r, c)| r * c).sum();
    if total != values.len() {
        return Err(bad(format!("data section holds {} values, manifest describes {total}", values.len())));
    }
    Ok((IclEbmModel::from_params(manifest.config, params)?, manifest))
}

pub fn save(path: &Path, model: &IclEbmModel, meta: serde_json::Value) -> Result<()> {
    std::fs::write(path, encode(model, meta)?).map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path) -> Result<(IclEbmModel, Manifest)> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(&bytes, path)
}
