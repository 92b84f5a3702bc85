//! Checkpoint files: an 8-byte magic, a `u32` little-endian header length,
//! a JSON header, then every parameter as little-endian `f32` in header
//! order.

use std::fs;
use std::path::Path;

use dcr_tensor::{ParamStore, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::ReasonerConfig;
use crate::error::{DcrError, Result};
use crate::objectives::HeadConfig;

/// `"DCRC"`, a NUL byte, then the format version `"001"`.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCRC\0001";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub reasoner: ReasonerConfig,
    pub heads: Option<HeadConfig>,
    #[serde(rename = "order-pretrained")]
    pub order_pretrained: bool,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore<f32>,
}

pub fn encode_checkpoint<T: Scalar>(
    reasoner: &ReasonerConfig,
    heads: Option<&HeadConfig>,
    order_pretrained: bool,
    store: &ParamStore<T>,
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        reasoner: reasoner.clone(),
        heads: heads.cloned(),
        order_pretrained,
        tensors: store
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| DcrError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * store.num_values());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for &v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        if bytes.len() >= 5 && &bytes[..5] == b"DCRC\0" {
            let version = std::str::from_utf8(&bytes[5..bytes.len().min(8)])
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            return Err(DcrError::UnsupportedVersion { path: path.into(), version });
        }
        return Err(DcrError::BadMagic {
            path: path.into(),
            found: bytes[..bytes.len().min(8)].to_vec(),
        });
    }
    let truncated = |expected: usize| DcrError::Truncated {
        path: path.into(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12 + hlen;
    if bytes.len() < body {
        return Err(truncated(body));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..body]).map_err(|e| DcrError::json(path, e))?;
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != body + 4 * total {
        return Err(truncated(body + 4 * total));
    }
    let mut values = bytes[body..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let n = t.shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(n).collect();
        store.add(t.name.clone(), Tensor::new(t.shape.clone(), data)?);
    }
    Ok(Checkpoint { header, store })
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    reasoner: &ReasonerConfig,
    heads: Option<&HeadConfig>,
    order_pretrained: bool,
    store: &ParamStore<T>,
) -> Result<()> {
    let bytes = encode_checkpoint(reasoner, heads, order_pretrained, store)?;
    fs::write(path, bytes).map_err(|e| DcrError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| DcrError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
