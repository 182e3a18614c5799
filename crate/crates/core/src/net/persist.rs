//! Versioned model container.
//!
//! Layout: 8-byte magic, u32 LE format version, u32 LE header length, a JSON
//! header (config, normalization stats, tensor shapes, payload digest), then
//! the little-endian f64 weight payload in canonical parameter order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{empty_params, ModelParams, NormStats};
use super::TrainConfig;
use crate::digest::fnv1a64_hex;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NILMNET\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    norm: NormStats,
    tensors: Vec<TensorInfo>,
    payload_digest: String,
}

fn payload_bytes(params: &ModelParams) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(params.n_parameters() * 8);
    for (_, mat) in params.param_list() {
        for v in &mat.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let payload = payload_bytes(params);
    let header = Header {
        version: FORMAT_VERSION,
        config: params.config.clone(),
        norm: params.norm.clone(),
        tensors: params
            .param_list()
            .iter()
            .map(|(name, mat)| TensorInfo {
                name: name.clone(),
                rows: mat.rows,
                cols: mat.cols,
            })
            .collect(),
        payload_digest: fnv1a64_hex(&payload),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(16 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::ModelTruncated(format!(
            "{}: {} bytes is too short for the container header",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::ModelVersion(format!(
            "{}: bad magic, not a model file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::ModelVersion(format!(
            "{}: format version {version}, expected {FORMAT_VERSION}",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(Error::ModelTruncated(format!(
            "{}: header claims {header_len} bytes but file ends early",
            path.display()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])?;
    header.config.validate()?;

    let mut params = empty_params(&header.config);

    // Shape consistency: the header's tensor list must match what the config
    // implies, name by name and shape by shape.
    {
        let expected = params.param_list();
        if expected.len() != header.tensors.len() {
            return Err(Error::Shape(format!(
                "header lists {} tensors but config implies {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        for ((name, mat), info) in expected.iter().zip(&header.tensors) {
            if *name != info.name || mat.rows != info.rows || mat.cols != info.cols {
                return Err(Error::Shape(format!(
                    "tensor `{}` ({}x{}) does not match config-implied `{}` ({}x{})",
                    info.name, info.rows, info.cols, name, mat.rows, mat.cols
                )));
            }
        }
    }

    params.norm = header.norm.clone();
    params.norm.validate(header.config.n_appliances)?;

    let payload = &bytes[16 + header_len..];
    let expected_len: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if payload.len() < expected_len {
        return Err(Error::ModelTruncated(format!(
            "{}: payload is {} bytes, expected {expected_len}",
            path.display(),
            payload.len()
        )));
    }
    if payload.len() > expected_len {
        return Err(Error::Validation(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            payload.len() - expected_len
        )));
    }
    let digest = fnv1a64_hex(payload);
    if digest != header.payload_digest {
        return Err(Error::ModelDigest(format!(
            "{}: payload digest {digest} does not match header {}",
            path.display(),
            header.payload_digest
        )));
    }

    let mut offset = 0;
    for (_, mat) in params.param_list_mut() {
        for v in mat.data.iter_mut() {
            *v = f64::from_le_bytes(payload[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
    }
    Ok(params)
}
