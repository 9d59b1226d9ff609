//! Self-describing checkpoint files.
//!
//! Layout: 8-byte magic, little-endian u32 header length, JSON header
//! (model spec, build seed, tensor and buffer directory), then raw
//! little-endian f64 blobs in directory order. Parameter bytes round-trip
//! bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hagnet_core::model::{HagNetModel, ModelSpec};
use hagnet_core::tensor::ParamId;

use crate::{CliError, Result};

const MAGIC: &[u8; 8] = b"HAGCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BufferEntry {
    width: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: ModelSpec,
    seed: u64,
    tensors: Vec<TensorEntry>,
    buffers: Vec<BufferEntry>,
}

pub fn save(model: &HagNetModel, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        format_version: 1,
        spec: model.spec().clone(),
        seed,
        tensors: model
            .params
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.shape.clone() })
            .collect(),
        buffers: model
            .buffers
            .iter()
            .map(|b| BufferEntry { width: b.running_mean.len() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(header_bytes.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for p in model.params.iter() {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for b in model.buffers.iter() {
        for v in b.running_mean.iter().chain(b.running_var.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Rebuilds the model from the stored spec and overwrites its parameters
/// and batch-norm buffers with the stored bytes.
pub fn load(path: impl AsRef<Path>) -> Result<(HagNetModel, u64)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(CliError::validation(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body_start = 12 + header_len;
    if bytes.len() < body_start {
        return Err(CliError::validation("truncated checkpoint header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..body_start])
        .map_err(|e| CliError::validation(format!("corrupt checkpoint header: {e}")))?;
    if header.format_version != 1 {
        return Err(CliError::validation(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let mut model = header.spec.build(header.seed)?;
    if model.params.len() != header.tensors.len() || model.buffers.len() != header.buffers.len() {
        return Err(CliError::validation(
            "checkpoint directory does not match the architecture its spec builds",
        ));
    }

    let mut offset = body_start;
    let read_f64s = |n: usize, offset: &mut usize| -> Result<Vec<f64>> {
        let end = *offset + n * 8;
        if bytes.len() < end {
            return Err(CliError::validation("truncated checkpoint data"));
        }
        let vals = bytes[*offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *offset = end;
        Ok(vals)
    };

    for (i, entry) in header.tensors.iter().enumerate() {
        let param = model.params.get(ParamId(i));
        if param.name != entry.name || param.shape != entry.shape {
            return Err(CliError::validation(format!(
                "checkpoint tensor `{}` {:?} does not match architecture tensor `{}` {:?}",
                entry.name, entry.shape, param.name, param.shape
            )));
        }
        let numel: usize = entry.shape.iter().product();
        model.params.get_mut(ParamId(i)).data = read_f64s(numel, &mut offset)?;
    }
    for (i, entry) in header.buffers.iter().enumerate() {
        let state = model.buffers.get_mut(hagnet_core::tensor::BnId(i));
        if state.running_mean.len() != entry.width {
            return Err(CliError::validation("checkpoint buffer width mismatch"));
        }
        state.running_mean = read_f64s(entry.width, &mut offset)?;
        state.running_var = read_f64s(entry.width, &mut offset)?;
    }
    if offset != bytes.len() {
        return Err(CliError::validation("trailing bytes after checkpoint data"));
    }
    Ok((model, header.seed))
}
