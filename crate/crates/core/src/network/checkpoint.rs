//! Binary checkpoint format.
//!
//! | bytes      | content                                           |
//! |------------|---------------------------------------------------|
//! | 0..4       | magic `AMCK`                                      |
//! | 4..8       | format version, u32 little-endian                 |
//! | 8..16      | header length L, u64 little-endian                |
//! | 16..16+L   | UTF-8 JSON `{config, tensors: [{name, dtype, shape, offset, len}]}` |
//! | 16+L..     | payload: raw little-endian floats                 |
//!
//! Tensor offsets are relative to the payload start; tensors are stored
//! contiguously in store order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"AMCK";
pub const VERSION: u32 = 1;
const PREFIX: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: [usize; 4],
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub config: ArchConfig,
    pub tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn to_bytes<T: Scalar>(store: &ParamStore<T>, config: &ArchConfig) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(store.num_scalars() * T::DTYPE.size_of());
    let mut tensors = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        let offset = payload.len() as u64;
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().0,
            offset,
            len: payload.len() as u64 - offset,
        });
    }
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(PREFIX + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses and validates the header, returning it with the payload slice.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < PREFIX {
        return Err(bad(format!("file of {} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic: not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(PREFIX))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad(format!("header length {len} exceeds the file")))?;
    let header: Header =
        serde_json::from_slice(&bytes[PREFIX..end]).map_err(|e| bad(format!("malformed header: {e}")))?;
    let payload = &bytes[end..];

    let mut expected = 0u64;
    for t in &header.tensors {
        let numel = Shape(t.shape).numel() as u64;
        if t.len != numel * t.dtype.size_of() as u64 {
            return Err(bad(format!(
                "tensor {} has length {} but shape {:?} of {} needs {}",
                t.name,
                t.len,
                t.shape,
                t.dtype,
                numel * t.dtype.size_of() as u64
            )));
        }
        if t.offset != expected {
            return Err(bad(format!(
                "tensor {} at offset {} (expected {expected})",
                t.name, t.offset
            )));
        }
        expected += t.len;
    }
    if expected != payload.len() as u64 {
        return Err(bad(format!(
            "payload holds {} bytes but the tensor table describes {expected}",
            payload.len()
        )));
    }
    Ok((header, payload))
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(ParamStore<T>, ArchConfig)> {
    let (header, payload) = read_header(bytes)?;
    let mut store = ParamStore::new();
    let width = T::DTYPE.size_of();
    for t in &header.tensors {
        if t.dtype != T::DTYPE {
            return Err(bad(format!(
                "tensor {} is stored as {} but {} was requested",
                t.name,
                t.dtype,
                T::DTYPE
            )));
        }
        let start = t.offset as usize;
        let raw = &payload[start..start + t.len as usize];
        let data: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
        store.insert(t.name.clone(), Tensor::from_vec(t.shape, data)?)?;
    }
    Ok((store, header.config))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, store: &ParamStore<T>, config: &ArchConfig) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(store, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(ParamStore<T>, ArchConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Reads only the header of a checkpoint file.
pub fn peek(path: impl AsRef<Path>) -> Result<Header> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_header(&bytes).map(|(h, _)| h)
}
