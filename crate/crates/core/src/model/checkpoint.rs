//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                                                   |
//! |--------|------|---------------------------------------------------------|
//! | 0      | 4    | magic `THCK`                                            |
//! | 4      | 4    | format version (u32, currently 1)                       |
//! | 8      | 4    | header length h (u32)                                   |
//! | 12     | h    | JSON header: variant, architecture, dtype, tensor list  |
//! | 12+h   | ...  | tensor data in header order, each row-major             |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, ModelParameters};
use super::real::Real;
use super::ModelVariant;
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"THCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    variant: ModelVariant,
    architecture: Architecture,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint<T: Real>(params: &ModelParameters<T>, path: &Path) -> Result<()> {
    let tensors = params.tensors();
    let header = Header {
        variant: params.variant,
        architecture: params.arch,
        dtype: T::DTYPE.to_string(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + params.parameter_count() * std::mem::size_of::<T>());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in &t.data {
            v.write_le(&mut buf);
        }
    }
    fs::write(path, buf).ctx(|| format!("writing {}", path.display()))
}

/// Load a checkpoint. With `expected`, a checkpoint of any other variant is
/// rejected.
pub fn load_checkpoint<T: Real>(path: &Path, expected: Option<ModelVariant>) -> Result<ModelParameters<T>> {
    let bytes = fs::read(path).ctx(|| format!("reading {}", path.display()))?;
    let corrupt = |reason: String| Error::CorruptContainer {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| corrupt("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if let Some(want) = expected {
        if want != header.variant {
            return Err(Error::VariantMismatch(format!(
                "{} holds a {} model, expected {}",
                path.display(),
                header.variant,
                want
            )));
        }
    }
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(corrupt(format!("unknown dtype {other}"))),
    };
    let mut params = ModelParameters::<T>::new(header.variant, header.architecture, 0)?;
    let mut slots = params.tensors_mut();
    if slots.len() != header.tensors.len() {
        return Err(corrupt(format!(
            "{} tensors stored, architecture has {}",
            header.tensors.len(),
            slots.len()
        )));
    }
    let mut pos = 12 + hlen;
    for ((name, slot), entry) in slots.iter_mut().zip(&header.tensors) {
        if *name != entry.name || slot.shape != entry.shape {
            return Err(corrupt(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, name, slot.shape
            )));
        }
        let len = slot.data.len() * width;
        let chunk = bytes
            .get(pos..pos + len)
            .ok_or_else(|| corrupt(format!("truncated in tensor {name}")))?;
        for (v, b) in slot.data.iter_mut().zip(chunk.chunks_exact(width)) {
            *v = match width {
                4 => T::of(f64::from(f32::read_le(b))),
                _ => T::of(f64::read_le(b)),
            };
        }
        pos += len;
    }
    if pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(params)
}
