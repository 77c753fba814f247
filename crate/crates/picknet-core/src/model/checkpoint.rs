//! Versioned binary checkpoint format.
//!
//! Layout: magic `PKNT`, u32 LE format version, u32-length-prefixed UTF-8
//! JSON config block, then for each named tensor a u32-length-prefixed name,
//! u32 rank, one u64 per extent, and the raw little-endian f32 data in
//! row-major order. The file ends with a CRC32 (IEEE) of all preceding bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PKNT";

/// Architecture description plus every learned tensor (kernels, biases,
/// batch-norm statistics and affine parameters) in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

/// Serialize a checkpoint to its binary form.
pub fn checkpoint_to_bytes(ck: &ModelCheckpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ck.format_version.to_le_bytes());
    let config_json = serde_json::to_vec(&ck.config)?;
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    for (name, tensor) in &ck.tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for &e in &tensor.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parse a checkpoint from its binary form, verifying magic, version, CRC
/// and tensor-shape consistency against the embedded config.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelCheckpoint> {
    if bytes.len() < 4 {
        return Err(Error::CheckpointTruncated);
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::CheckpointBadMagic);
    }
    if bytes.len() < 12 + 4 {
        return Err(Error::CheckpointTruncated);
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::CheckpointCrcMismatch { stored, computed });
    }

    let mut pos = 4;
    let version = read_u32(bytes, &mut pos, body_end)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointUnsupportedVersion(version));
    }
    let config_len = read_u32(bytes, &mut pos, body_end)? as usize;
    let config_bytes = read_slice(bytes, &mut pos, config_len, body_end)?;
    let config: ModelConfig = serde_json::from_slice(config_bytes)?;

    let mut tensors = Vec::new();
    while pos < body_end {
        let name_len = read_u32(bytes, &mut pos, body_end)? as usize;
        let name_bytes = read_slice(bytes, &mut pos, name_len, body_end)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::CheckpointShape("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = read_u32(bytes, &mut pos, body_end)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = read_u64(bytes, &mut pos, body_end)?;
            shape.push(e as usize);
        }
        let count: usize = shape.iter().product();
        let data_bytes = read_slice(bytes, &mut pos, count * 4, body_end)?;
        let data: Vec<f32> = data_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Tensor { shape, data }));
    }

    let ck = ModelCheckpoint {
        format_version: version,
        config,
        tensors,
    };
    validate_against_config(&ck)?;
    Ok(ck)
}

/// Every layer's parameters must be present exactly once with shapes that
/// match the config. Checked by instantiating the network once.
fn validate_against_config(ck: &ModelCheckpoint) -> Result<()> {
    ck.config
        .validate()
        .map_err(|e| Error::CheckpointShape(e.to_string()))?;
    super::PickNet::<f32>::from_checkpoint(ck).map(|_| ())
}

/// Write a checkpoint file.
pub fn save_checkpoint(ck: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = checkpoint_to_bytes(ck)?;
    let mut f = std::fs::File::create(path.as_ref())?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Read and validate a checkpoint file.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

fn read_u32(bytes: &[u8], pos: &mut usize, end: usize) -> Result<u32> {
    let s = read_slice(bytes, pos, 4, end)?;
    Ok(u32::from_le_bytes(s.try_into().unwrap()))
}

fn read_u64(bytes: &[u8], pos: &mut usize, end: usize) -> Result<u64> {
    let s = read_slice(bytes, pos, 8, end)?;
    Ok(u64::from_le_bytes(s.try_into().unwrap()))
}

fn read_slice<'a>(bytes: &'a [u8], pos: &mut usize, len: usize, end: usize) -> Result<&'a [u8]> {
    let hi = pos.checked_add(len).ok_or(Error::CheckpointTruncated)?;
    if hi > end {
        return Err(Error::CheckpointTruncated);
    }
    let s = &bytes[*pos..hi];
    *pos = hi;
    Ok(s)
}
