//! Single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MMDT" | version: u32 = 1 | header_len: u64 | header: JSON (header_len bytes) | payload
//! ```
//!
//! The JSON header carries the model and training configs, the vocabulary,
//! the epoch, the best selection metric and a tensor directory
//! (`name`, `shape`, byte `offset` into the payload). The payload is the
//! parameters as `f64` in canonical order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Params, PARAM_NAMES};
use crate::objective::TrainConfig;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MMDT";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub train_config: TrainConfig,
    pub vocab: Vocab,
    pub epoch: usize,
    pub best_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocab,
    epoch: usize,
    best_metric: Option<f64>,
    tensors: Vec<TensorEntry>,
}

pub fn checkpoint_bytes(params: &Params, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let tensors = params
        .named()
        .map(|(name, t)| {
            let entry = TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.len() as u64;
            entry
        })
        .collect();
    let header = Header {
        model_config: params.config.clone(),
        train_config: meta.train_config.clone(),
        vocab: meta.vocab.clone(),
        epoch: meta.epoch,
        best_metric: meta.best_metric,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Params, CheckpointMeta)> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < PREAMBLE {
        return Err(bad(format!("file of {} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| bad(format!("header length {header_len} runs past end of file")))?
        as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| bad(format!("unreadable header: {e}")))?;

    let cfg = &header.model_config;
    cfg.validate()?;
    if header.vocab.len() != cfg.vocab_size {
        return Err(bad(format!(
            "vocabulary has {} tokens but model expects {}",
            header.vocab.len(),
            cfg.vocab_size
        )));
    }
    let expected = cfg.param_shapes();
    if header.tensors.len() != expected.len() {
        return Err(bad(format!(
            "directory lists {} tensors, expected {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut offset = 0u64;
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if entry.name != *name {
            return Err(bad(format!(
                "tensor {:?} out of canonical order (expected {name:?})",
                entry.name
            )));
        }
        if entry.shape != *shape {
            return Err(Error::Shape(format!(
                "{name}: header says {:?}, config implies {shape:?}",
                entry.shape
            )));
        }
        if entry.offset != offset {
            return Err(bad(format!("{name}: offset {} != {offset}", entry.offset)));
        }
        offset += 8 * shape.iter().product::<usize>() as u64;
    }

    let payload = &bytes[header_end..];
    if payload.len() as u64 != offset {
        return Err(bad(format!(
            "payload length mismatch: {} bytes, directory needs {offset}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let tensors = expected
        .iter()
        .map(|(_, shape)| {
            let len = shape.iter().product();
            Tensor::from_vec(shape, values.by_ref().take(len).collect())
                .expect("length checked above")
        })
        .collect();
    debug_assert_eq!(PARAM_NAMES.len(), expected.len());
    let params = Params::from_tensors(cfg, tensors)?;
    Ok((
        params,
        CheckpointMeta {
            train_config: header.train_config,
            vocab: header.vocab,
            epoch: header.epoch,
            best_metric: header.best_metric,
        },
    ))
}

/// Writes through a temporary file in the destination directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_checkpoint(params: &Params, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(params, meta)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(Params, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
