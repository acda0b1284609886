//! Model file: `"VAMF"`, u32 LE version, u32 LE JSON length, UTF-8 JSON
//! header, then every parameter as f32 LE in the models' flat order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, Model, Network};
use crate::error::{Error, Result};
use crate::refdevice::TubeStageConfig;
use crate::signal::DEFAULT_SAMPLE_RATE;

pub const MODEL_MAGIC: &[u8; 4] = b"VAMF";
pub const MODEL_VERSION: u32 = 1;

/// Everything in the header besides the architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub sample_rate_hz: u32,
    pub conditioning_range: [f64; 2],
    /// Reference device the training targets came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<TubeStageConfig>,
    /// SHA-256 of every source file seen in training, for leakage checks.
    #[serde(default)]
    pub training_sources: Vec<String>,
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            conditioning_range: [0.0, 1.0],
            device: None,
            training_sources: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    arch: ArchConfig,
    #[serde(flatten)]
    meta: ModelMeta,
}

pub fn model_to_bytes(model: &Model, meta: &ModelMeta) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        arch: model.arch(),
        meta: meta.clone(),
    })
    .map_err(|e| Error::ModelFile(format!("header encoding: {e}")))?;
    let params = model.params();
    let mut out = Vec::with_capacity(12 + header.len() + 4 * params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::ModelFile(format!("truncated {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    let b = take(bytes, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn model_from_bytes(mut bytes: &[u8]) -> Result<(Model, ModelMeta)> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFile(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = take_u32(&mut bytes, "version")?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFile(format!("unsupported version {version}")));
    }
    let json_len = take_u32(&mut bytes, "header length")? as usize;
    let json = take(&mut bytes, json_len, "header")?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::ModelFile(format!("header: {e}")))?;
    let mut model = Model::zeros(&header.arch).map_err(|e| Error::ModelFile(e.to_string()))?;
    let expected = model.num_params();
    if bytes.len() != 4 * expected {
        return Err(Error::ModelFile(format!(
            "parameter blob holds {} bytes, architecture needs {}",
            bytes.len(),
            4 * expected
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::ModelFile("non-finite parameter".into()));
    }
    model.set_params(&params)?;
    Ok((model, header.meta))
}

pub fn save_model(model: &Model, meta: &ModelMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Model, ModelMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
