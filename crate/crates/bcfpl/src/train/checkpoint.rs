//! Checkpoint container: a fixed 8-byte magic, a length-prefixed JSON
//! header describing the architecture and the stored arrays, the raw
//! little-endian f32 payload, and a trailing CRC32 of the payload.
//!
//! Layout:
//!
//! ```text
//! "BCFPLCK1" | header_len: u32 LE | header JSON | payload | crc32: u32 LE
//! ```
//!
//! The header lists every array with its shape and byte offset into the
//! payload. Model arrays are always present; optimizer moments ride along
//! when the optimizer state is saved too.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::model::{BcfplModel, TRAINABLE_NAMES};
use crate::nn::tensor::Tensor;

use super::AdamWState;

pub const MAGIC: [u8; 8] = *b"BCFPLCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("corrupted checkpoint: {0}")]
    Corrupt(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("i/o error")]
    Io(#[from] io::Error),
}

/// Identifies the fixed model geometry this build writes and accepts.
pub fn arch_fingerprint() -> String {
    use crate::nn::model as m;
    format!(
        "in{}x{}x{};conv{}k{}s{};bn{};conv{}k{}s{};bn{};fc{};fc{}",
        m::INPUT_CHANNELS,
        m::INPUT_SIDE,
        m::INPUT_SIDE,
        m::CONV1_FILTERS,
        m::KERNEL_SIDE,
        m::CONV1_STRIDE,
        m::CONV1_FILTERS,
        m::CONV2_FILTERS,
        m::KERNEL_SIDE,
        m::CONV2_STRIDE,
        m::CONV2_FILTERS,
        m::HIDDEN_WIDTH,
        m::NUM_CLASSES,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    arch: String,
    /// Optimizer step count; present exactly when moment arrays are stored.
    adamw_step: Option<u64>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

fn push_array(
    header: &mut Header,
    payload: &mut Vec<u8>,
    name: String,
    tensor: &Tensor<f32>,
) {
    header.arrays.push(ArrayEntry {
        name,
        shape: tensor.shape().to_vec(),
        byte_offset: payload.len() as u64,
    });
    for &v in tensor.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the model, and the optimizer state when given, to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &BcfplModel<f32>,
    optimizer: Option<&AdamWState<f32>>,
) -> Result<(), CheckpointError> {
    let mut header = Header {
        format_version: FORMAT_VERSION,
        arch: arch_fingerprint(),
        adamw_step: optimizer.map(|s| s.t),
        arrays: Vec::new(),
    };
    let mut payload = Vec::new();
    for (name, tensor) in model.named_arrays() {
        push_array(&mut header, &mut payload, name.to_string(), tensor);
    }
    if let Some(state) = optimizer {
        for (kind, moments) in [("m", &state.m), ("v", &state.v)] {
            for (name, tensor) in TRAINABLE_NAMES.iter().zip(moments) {
                push_array(&mut header, &mut payload, format!("opt.{kind}.{name}"), tensor);
            }
        }
    }
    let header_json =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header_json.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    fs::write(path, out)?;
    Ok(())
}

fn read_u32(bytes: &[u8]) -> u32 {
    u32::from_le_bytes(bytes.try_into().expect("4 bytes"))
}

/// Loads a checkpoint, returning the model and, when it was saved with
/// one, the optimizer state.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(BcfplModel<f32>, Option<AdamWState<f32>>), CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 {
        return Err(CheckpointError::Malformed("file shorter than header".into()));
    }
    if bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = read_u32(&bytes[MAGIC.len()..MAGIC.len() + 4]) as usize;
    let header_start = MAGIC.len() + 4;
    let payload_start = header_start + header_len;
    if payload_start > bytes.len() {
        return Err(CheckpointError::Malformed("header overruns file".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[header_start..payload_start])
        .map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if header.arch != arch_fingerprint() {
        return Err(CheckpointError::ArchitectureMismatch(format!(
            "checkpoint built for {:?}, this build is {:?}",
            header.arch,
            arch_fingerprint()
        )));
    }

    // Validate the array table against the fixed architecture before
    // touching the payload, so a wrong shape reads as an architecture
    // problem rather than corruption.
    let mut model = BcfplModel::<f32>::init(0);
    let expected_names: Vec<String> = {
        let model_names = model.named_arrays().map(|(n, _)| n.to_string());
        let mut names: Vec<String> = model_names.to_vec();
        if header.adamw_step.is_some() {
            for kind in ["m", "v"] {
                names.extend(TRAINABLE_NAMES.iter().map(|n| format!("opt.{kind}.{n}")));
            }
        }
        names
    };
    if header.arrays.len() != expected_names.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} arrays, header lists {}",
            expected_names.len(),
            header.arrays.len()
        )));
    }
    let expected_shape = |name: &str| -> Option<Vec<usize>> {
        let bare = name.strip_prefix("opt.m.").or_else(|| name.strip_prefix("opt.v."));
        let target = bare.unwrap_or(name);
        model
            .named_arrays()
            .iter()
            .find(|(n, _)| *n == target)
            .map(|(_, t)| t.shape().to_vec())
    };
    let mut offset = 0u64;
    for (entry, expected_name) in header.arrays.iter().zip(&expected_names) {
        if &entry.name != expected_name {
            return Err(CheckpointError::Malformed(format!(
                "array {:?} where {:?} was expected",
                entry.name, expected_name
            )));
        }
        let shape = expected_shape(&entry.name).ok_or_else(|| {
            CheckpointError::Malformed(format!("unknown array {:?}", entry.name))
        })?;
        if entry.shape != shape {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "array {:?} has shape {:?}, this build expects {:?}",
                entry.name, entry.shape, shape
            )));
        }
        if entry.byte_offset != offset {
            return Err(CheckpointError::Malformed(format!(
                "array {:?} at offset {}, expected {}",
                entry.name, entry.byte_offset, offset
            )));
        }
        offset += (entry.shape.iter().product::<usize>() * 4) as u64;
    }

    let payload_len = offset as usize;
    if bytes.len() != payload_start + payload_len + 4 {
        return Err(CheckpointError::Corrupt(format!(
            "payload + checksum should span {} bytes, file has {}",
            payload_len + 4,
            bytes.len() - payload_start
        )));
    }
    let payload = &bytes[payload_start..payload_start + payload_len];
    let stored_crc = read_u32(&bytes[payload_start + payload_len..]);
    let actual_crc = crc32fast::hash(payload);
    if stored_crc != actual_crc {
        return Err(CheckpointError::Corrupt(format!(
            "checksum {actual_crc:#010x} does not match stored {stored_crc:#010x}"
        )));
    }

    let decode = |entry: &ArrayEntry| -> Tensor<f32> {
        let start = entry.byte_offset as usize;
        let count: usize = entry.shape.iter().product();
        let data: Vec<f32> = payload[start..start + count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::from_vec(&entry.shape, data).expect("validated shape")
    };
    let model_array_count = model.named_arrays().len();
    for ((_, slot), entry) in model
        .named_arrays_mut()
        .into_iter()
        .zip(&header.arrays[..model_array_count])
    {
        *slot = decode(entry);
    }
    let optimizer = header.adamw_step.map(|t| {
        let rest = &header.arrays[model_array_count..];
        let m = rest[..TRAINABLE_NAMES.len()].iter().map(decode).collect();
        let v = rest[TRAINABLE_NAMES.len()..].iter().map(decode).collect();
        AdamWState { m, v, t }
    });
    Ok((model, optimizer))
}
