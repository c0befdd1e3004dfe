//! Checkpoint file format.
//!
//! ```text
//! "TABTXTCK"            8-byte magic
//! u64 little-endian     manifest length in bytes
//! manifest              JSON: format_version, config, schema, vocab, density,
//!                       train_log, tensors [{name, shape, offset, bytes}]
//! tensor section        little-endian f32 values; offsets are relative to
//!                       the start of this section
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Layout, LmParams};
use super::{LmConfig, LmError, Result};
use crate::density::FeatureDensity;
use crate::table::Schema;
use crate::tokenizer::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TABTXTCK";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: LmConfig,
    pub params: LmParams<f32>,
    pub vocab: Vocabulary,
    pub schema: Schema,
    /// Training-data marginals for name-value preconditioning.
    pub density: FeatureDensity,
    pub train_log: Vec<LogEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: LmConfig,
    schema: Schema,
    vocab: serde_json::Value,
    density: FeatureDensity,
    train_log: Vec<LogEntry>,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: ckpt.config.clone(),
        schema: ckpt.schema.clone(),
        vocab: ckpt.vocab.to_json(),
        density: ckpt.density.clone(),
        train_log: ckpt.train_log.clone(),
        tensors: ckpt
            .params
            .layout
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: t.offset * 4,
                bytes: t.len() * 4,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| LmError::Malformed(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(ckpt.params.len() * 4);
    for &x in &ckpt.params.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LmError::Malformed("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > (1 << 32) {
        return Err(LmError::Malformed(format!("manifest length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let value: serde_json::Value = serde_json::from_slice(&json).map_err(|e| LmError::Malformed(e.to_string()))?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(LmError::VersionMismatch { found, expected: FORMAT_VERSION });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| LmError::Malformed(e.to_string()))?;
    manifest.config.validate()?;
    let layout = Layout::new(&manifest.config);
    let matches =
        layout.tensors.len() == manifest.tensors.len()
            && layout.tensors.iter().zip(&manifest.tensors).all(|(a, b)| {
                a.name == b.name && a.shape == b.shape && a.offset * 4 == b.offset && a.len() * 4 == b.bytes
            });
    if !matches {
        return Err(LmError::Malformed("tensor index does not match the configuration".into()));
    }
    let vocab = Vocabulary::from_json(&manifest.vocab)?;
    if vocab.len() != manifest.config.vocab_size {
        return Err(LmError::Malformed("vocabulary size disagrees with the configuration".into()));
    }
    manifest.schema.validate()?;
    let mut raw = vec![0u8; layout.total * 4];
    input.read_exact(&mut raw)?;
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Ok(Checkpoint {
        config: manifest.config,
        params: LmParams { layout, data },
        vocab,
        schema: manifest.schema,
        density: manifest.density,
        train_log: manifest.train_log,
    })
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(ckpt, BufWriter::new(File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
