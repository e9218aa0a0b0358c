//! Binary checkpoint format: `DATSE1`, a little-endian `u32` length, a JSON
//! metadata block of that length, then every parameter as little-endian
//! `f32` values in declared order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureNorm, ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"DATSE1";
pub const FORMAT_VERSION: u32 = 1;
const GATE_ORDER: &str = "input,forget,cell,output";

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    gate_order: String,
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
    input_norm: FeatureNorm,
    output_norm: FeatureNorm,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(model: &ModelParams<f32>, mut w: W) -> Result<()> {
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        gate_order: GATE_ORDER.into(),
        config: model.config,
        tensors: ModelParams::<f32>::param_names()
            .iter()
            .zip(model.tensors())
            .map(|(n, t)| TensorMeta { name: (*n).into(), shape: t.shape().to_vec() })
            .collect(),
        input_norm: model.input_norm.clone(),
        output_norm: model.output_norm.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    let len = u32::try_from(json.len()).map_err(|_| corrupt("metadata too large"))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.tensors() {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams<f32>> {
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint (bad magic bytes)"));
    }
    let mut len = [0u8; 4];
    read_exact(&mut r, &mut len, "metadata length")?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 64 << 20 {
        return Err(corrupt(format!("metadata length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    read_exact(&mut r, &mut json, "metadata")?;
    let meta: Metadata = serde_json::from_slice(&json).map_err(|e| corrupt(format!("metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.gate_order != GATE_ORDER {
        return Err(corrupt(format!("unsupported gate order {:?}", meta.gate_order)));
    }
    meta.config.validate().map_err(|e| corrupt(e.to_string()))?;
    let mut model = ModelParams::<f32>::zeros(meta.config)?;
    let names = ModelParams::<f32>::param_names();
    if meta.tensors.len() != names.len() {
        return Err(corrupt(format!("{} tensors listed, expected {}", meta.tensors.len(), names.len())));
    }
    for ((tm, name), t) in meta.tensors.iter().zip(names).zip(model.tensors_mut()) {
        if tm.name != *name || tm.shape != t.shape() {
            return Err(corrupt(format!(
                "tensor {} has shape {:?}, config implies {name} {:?}",
                tm.name,
                tm.shape,
                t.shape()
            )));
        }
        let mut bytes = vec![0u8; t.len() * 4];
        read_exact(&mut r, &mut bytes, name)?;
        for (v, b) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    let dim = meta.config.feature_dim;
    for norm in [&meta.input_norm, &meta.output_norm] {
        if norm.mean.len() != dim || norm.std.len() != dim || norm.std.iter().any(|s| !(*s > 0.0)) {
            return Err(corrupt("feature normalizer does not match the feature dimension"));
        }
    }
    model.input_norm = meta.input_norm;
    model.output_norm = meta.output_norm;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(corrupt("trailing bytes after the last tensor"));
    }
    Ok(model)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => corrupt(format!("file truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

pub fn save_checkpoint(model: &ModelParams<f32>, path: &Path) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
