//! `.spck` checkpoint container.
//!
//! ```text
//! 0   magic "SPCK"
//! 4   u32 version = 1
//! 8   u64 header length in bytes
//! 16  JSON header
//! ..  tensor payloads, little-endian, in directory order
//! ..  u32 CRC32 of every preceding byte
//! ```
//!
//! Tensor offsets in the directory are relative to the first payload byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spcor_core::distill::{Model, ModelConfig, TrainConfig};
use spcor_core::numkit::Parameters;
use spcor_core::sampler::SamplerConfig;
use spcor_core::Real;

use crate::{SpcorError, SpcorResult};

pub const MAGIC: &[u8; 4] = b"SPCK";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset into the payload section.
    pub offset: u64,
    /// Element count.
    pub len: u64,
    pub dtype: String,
    /// False for teacher tensors, which are never restored for inference.
    pub inference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub precision: String,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub sampler: SamplerConfig,
    pub has_teacher: bool,
    /// Training steps taken.
    pub steps: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restore {
    /// Student and teacher.
    Full,
    /// Student only; teacher tensors are skipped without being decoded.
    Inference,
}

fn collect_tensors<T: Real>(model: &Model<T>) -> Vec<(String, Vec<T>)> {
    let mut m = model.clone();
    let mut out = Vec::new();
    m.visit_params("", &mut |name, v, _| out.push((name.to_owned(), v.to_vec())));
    out
}

pub fn encode_checkpoint<T: Real>(
    model: &Model<T>,
    train: Option<&TrainConfig>,
    sampler: &SamplerConfig,
    steps: usize,
) -> Vec<u8> {
    let width = std::mem::size_of::<T>();
    let tensors = collect_tensors(model);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, values) in &tensors {
        entries.push(TensorEntry {
            inference: !name.starts_with("teacher."),
            name: name.clone(),
            offset: payload.len() as u64,
            len: values.len() as u64,
            dtype: T::NAME.to_owned(),
        });
        for &v in values {
            if width == 4 {
                payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                payload.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    let header = CheckpointHeader {
        precision: T::NAME.to_owned(),
        model: model.config,
        train: train.copied(),
        sampler: *sampler,
        has_teacher: model.teacher.is_some(),
        steps,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint<T: Real>(
    model: &Model<T>,
    train: Option<&TrainConfig>,
    sampler: &SamplerConfig,
    steps: usize,
    path: &Path,
) -> SpcorResult<()> {
    fs::write(path, encode_checkpoint(model, train, sampler, steps)).map_err(|e| SpcorError::io(path, e))
}

fn split(bytes: &[u8], path: &Path) -> SpcorResult<(CheckpointHeader, usize)> {
    let bad = |msg: String| SpcorError::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(SpcorError::format(path, "missing SPCK magic"));
    }
    if bytes.len() < PREAMBLE + 4 {
        return Err(SpcorError::corrupt(path, "truncated checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(SpcorError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(&bytes[..body]);
    if stored != actual {
        return Err(SpcorError::corrupt(
            path,
            format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})"),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = PREAMBLE
        .checked_add(header_len)
        .filter(|&s| s <= body)
        .ok_or_else(|| SpcorError::corrupt(path, "header length runs past the end of the file"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
        .map_err(|e| bad(format!("unreadable header: {e}")))?;
    let payload_len = body - payload_start;
    for e in &header.tensors {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(bad(format!("tensor {} has unknown dtype {other}", e.name))),
        };
        let end = e.len.checked_mul(width).and_then(|n| n.checked_add(e.offset));
        if end.is_none_or(|end| end > payload_len as u64) {
            return Err(SpcorError::corrupt(path, format!("tensor {} runs past the payload", e.name)));
        }
    }
    Ok((header, payload_start))
}

pub fn read_header(path: &Path) -> SpcorResult<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| SpcorError::io(path, e))?;
    Ok(split(&bytes, path)?.0)
}

pub fn decode_checkpoint<T: Real>(
    bytes: &[u8],
    path: &Path,
    restore: Restore,
) -> SpcorResult<(Model<T>, CheckpointHeader)> {
    let (header, start) = split(bytes, path)?;
    let bad = |msg: String| SpcorError::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    if header.precision != T::NAME {
        return Err(bad(format!(
            "checkpoint holds {} tensors but the run uses {}",
            header.precision,
            T::NAME
        )));
    }
    let with_teacher = header.has_teacher && restore == Restore::Full;
    let mut model = if with_teacher {
        Model::<T>::init(header.model)
    } else {
        Model::<T>::student_only(header.model)
    }
    .map_err(|e| bad(format!("model config rejected: {e}")))?;

    let wanted: Vec<&TensorEntry> = header
        .tensors
        .iter()
        .filter(|e| with_teacher || e.inference)
        .collect();
    let payload = &bytes[start..bytes.len() - 4];
    let mut next = 0;
    let mut failure = None;
    model.visit_params("", &mut |name, values, _| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = wanted.get(next) else {
            failure = Some(format!("checkpoint has no tensor {name}"));
            return;
        };
        next += 1;
        if entry.name != name || entry.len != values.len() as u64 {
            failure = Some(format!(
                "tensor {} ({} values) does not match model tensor {name} ({} values)",
                entry.name,
                entry.len,
                values.len()
            ));
            return;
        }
        let width = std::mem::size_of::<T>();
        let at = entry.offset as usize;
        for (i, v) in values.iter_mut().enumerate() {
            let b = &payload[at + i * width..at + (i + 1) * width];
            *v = if width == 4 {
                T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            } else {
                T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes")))
            };
        }
    });
    if let Some(msg) = failure {
        return Err(bad(msg));
    }
    if next != wanted.len() {
        return Err(bad(format!(
            "checkpoint has {} tensors the model does not use",
            wanted.len() - next
        )));
    }
    Ok((model, header))
}

pub fn load_checkpoint<T: Real>(path: &Path, restore: Restore) -> SpcorResult<(Model<T>, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| SpcorError::io(path, e))?;
    decode_checkpoint(&bytes, path, restore)
}
