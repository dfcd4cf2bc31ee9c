//! Checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SFCK"
//! 4       4     u32 LE format version (1)
//! 8       4     u32 LE header length H
//! 12      H     UTF-8 JSON header: {"config", "sources", "tensors": [{"name", "shape", "offset"}]}
//! 12+H    ...   f32 LE payload; tensor `offset` counts f32 elements from here
//! ```
//!
//! Parameters are stored at 32-bit precision and widened on load.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, NetworkError, Result};
use crate::schema::SourceTable;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub sources: SourceTable,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    sources: SourceTable,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> NetworkError {
    NetworkError::BadCheckpoint(msg.into())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    if ckpt.sources.len() != ckpt.config.n_sources {
        return Err(bad(format!(
            "source table has {} entries, config expects {}",
            ckpt.sources.len(),
            ckpt.config.n_sources
        )));
    }
    let tensors = ckpt.params.tensors();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in &tensors {
        entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.len();
    }
    let header = Header { config: ckpt.config.clone(), sources: ckpt.sources.clone(), tensors: entries };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    let header_len = u32::try_from(json.len()).map_err(|_| bad("header too large"))?;

    let mut out = Vec::with_capacity(12 + json.len() + 4 * offset);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for &v in t.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated file"))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().expect("4 bytes")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(bytes, &mut pos)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = read_u32(bytes, &mut pos)? as usize;
    let header: Header = serde_json::from_slice(take(bytes, &mut pos, header_len)?).map_err(|e| bad(e.to_string()))?;
    header.config.validate()?;
    if header.sources.len() != header.config.n_sources {
        return Err(bad("source table does not match config"));
    }
    let payload = &bytes[pos..];
    if payload.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();

    let mut params = ModelParams::init(&header.config);
    let expected = ModelParams::expected_shapes(&header.config);
    if expected.len() != header.tensors.len() {
        return Err(bad(format!("{} tensors stored, config implies {}", header.tensors.len(), expected.len())));
    }
    let mut used = 0;
    for ((entry, (name, shape)), (_, mut dst)) in header.tensors.iter().zip(&expected).zip(params.tensors_mut()) {
        if &entry.name != name {
            return Err(bad(format!("tensor `{}` found where `{name}` was expected", entry.name)));
        }
        if &entry.shape != shape {
            return Err(NetworkError::ShapeMismatch { name: name.clone(), got: entry.shape.clone(), expected: shape.clone() });
        }
        let len: usize = shape.iter().product();
        let src = entry
            .offset
            .checked_add(len)
            .and_then(|end| values.get(entry.offset..end))
            .ok_or_else(|| bad(format!("tensor `{name}` lies outside the payload")))?;
        let src: Vec<f64> = src.iter().map(|&v| v as f64).collect();
        dst.assign(&ArrayViewD::from_shape(IxDyn(shape), &src).expect("length checked"));
        used += len;
    }
    if used != values.len() {
        return Err(bad(format!("payload has {} values, tensors use {used}", values.len())));
    }
    Ok(Checkpoint { config: header.config, sources: header.sources, params })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

impl Checkpoint {
    /// Rounds parameters to the stored precision, so that a checkpoint
    /// compares equal to its own round-trip.
    pub fn quantized(mut self) -> Self {
        for (_, mut t) in self.params.tensors_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
        self
    }
}
