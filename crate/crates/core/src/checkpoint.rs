//! Binary checkpoints: a JSON manifest followed by a raw parameter blob.
//!
//! ```text
//! magic "TGCKPT\0\x01" | u64 manifest_len | manifest JSON
//! | u64 blob_len | blob (f32 little-endian) | sha256 of all preceding bytes
//! ```
//!
//! Parameters are stored at 32-bit precision, so `save → load → save`
//! reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::model::TextGroupModel;
use crate::world::vocab::hex_digest;
use crate::world::Vocab;

pub const MAGIC: &[u8; 8] = b"TGCKPT\x00\x01";
pub const CHECKPOINT_SCHEMA: &str = "tgckpt1";
const DIGEST_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint schema `{0}` is not supported")]
    Schema(String),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("tensor `{name}`: stored shape {stored:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checksum mismatch in {0}")]
    HashMismatch(&'static str),
    #[error("malformed manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub config: RunConfig,
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub step: u64,
    pub epoch: usize,
    pub blob_sha256: String,
}

/// A restored model with its run metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub model: TextGroupModel,
    pub step: u64,
    pub epoch: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_digest(h)
}

/// Serializes the model parameters and run metadata.
pub fn to_bytes(config: &RunConfig, vocab: &Vocab, model: &TextGroupModel, step: u64, epoch: usize) -> Vec<u8> {
    let mut blob = Vec::with_capacity(model.params.num_scalars() * 4);
    let mut tensors = Vec::with_capacity(model.params.len());
    for id in model.params.ids() {
        tensors.push(TensorEntry {
            name: model.params.name(id).to_string(),
            shape: model.params.shape(id).to_vec(),
            offset: blob.len(),
        });
        for &x in model.params.data(id) {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        schema: CHECKPOINT_SCHEMA.to_string(),
        config: config.clone(),
        vocab: vocab.tokens().to_vec(),
        tensors,
        step,
        epoch,
        blob_sha256: sha256_hex(&blob),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(blob.len() + json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
    if bytes.len() < n {
        return Err(CheckpointError::Truncated(format!(
            "{what} needs {n} bytes, {} left",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_len(bytes: &mut &[u8], what: &str) -> Result<usize, CheckpointError> {
    let raw = take(bytes, 8, what)?;
    let n = u64::from_le_bytes(raw.try_into().expect("8 bytes"));
    usize::try_from(n).map_err(|_| CheckpointError::Truncated(format!("{what} of {n} bytes")))
}

/// Parses and verifies a checkpoint.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut rest = bytes;
    if take(&mut rest, MAGIC.len(), "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let manifest_len = take_len(&mut rest, "manifest length")?;
    let json = take(&mut rest, manifest_len, "manifest")?;
    let blob_len = take_len(&mut rest, "blob length")?;
    let blob = take(&mut rest, blob_len, "blob")?;
    let digest = take(&mut rest, DIGEST_LEN, "file checksum")?;
    if !rest.is_empty() {
        return Err(CheckpointError::Manifest(format!("{} trailing bytes", rest.len())));
    }
    if Sha256::digest(&bytes[..bytes.len() - DIGEST_LEN]).as_slice() != digest {
        return Err(CheckpointError::HashMismatch("file"));
    }
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.schema != CHECKPOINT_SCHEMA {
        return Err(CheckpointError::Schema(manifest.schema));
    }
    if sha256_hex(blob) != manifest.blob_sha256 {
        return Err(CheckpointError::HashMismatch("blob"));
    }
    let vocab = Vocab::from_tokens(manifest.vocab).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut model = TextGroupModel::new(manifest.config.encoder.clone(), 0)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.tensors.len() != model.params.len() {
        return Err(CheckpointError::Manifest(format!(
            "{} tensors stored, model has {}",
            manifest.tensors.len(),
            model.params.len()
        )));
    }
    let mut seen = vec![false; model.params.len()];
    for entry in &manifest.tensors {
        let id = model
            .params
            .find(&entry.name)
            .ok_or_else(|| CheckpointError::Manifest(format!("unknown tensor `{}`", entry.name)))?;
        let idx = model.params.ids().position(|i| i == id).expect("id from store");
        if std::mem::replace(&mut seen[idx], true) {
            return Err(CheckpointError::Manifest(format!("tensor `{}` stored twice", entry.name)));
        }
        let expected = model.params.shape(id).to_vec();
        if entry.shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                stored: entry.shape.clone(),
                expected,
            });
        }
        let n: usize = expected.iter().product();
        let end = entry.offset.checked_add(n * 4).filter(|&e| e <= blob.len()).ok_or_else(|| {
            CheckpointError::Truncated(format!("tensor `{}` runs past the blob", entry.name))
        })?;
        let data = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        model.params.set_data(id, data).expect("shape checked");
    }
    Ok(Checkpoint {
        config: manifest.config,
        vocab,
        model,
        step: manifest.step,
        epoch: manifest.epoch,
    })
}

pub fn save(
    path: &Path,
    config: &RunConfig,
    vocab: &Vocab,
    model: &TextGroupModel,
    step: u64,
    epoch: usize,
) -> Result<String, CheckpointError> {
    let bytes = to_bytes(config, vocab, model, step, epoch);
    fs::write(path, &bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Loads a checkpoint and returns it with the SHA-256 of the file.
pub fn load(path: &Path) -> Result<(Checkpoint, String), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok((from_bytes(&bytes)?, sha256_hex(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;

    fn tiny() -> (RunConfig, Vocab, TextGroupModel) {
        let config = RunConfig {
            encoder: EncoderConfig {
                model_dim: 8,
                n_heads: 2,
                n_pre_layers: 1,
                n_post_layers: 1,
                projection_dim: 4,
                ..EncoderConfig::default()
            },
            ..RunConfig::default()
        };
        let model = TextGroupModel::new(config.encoder.clone(), 3).unwrap();
        (config, Vocab::synthetic(), model)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (c, v, m) = tiny();
        let a = to_bytes(&c, &v, &m, 7, 2);
        let ck = from_bytes(&a).unwrap();
        assert_eq!((ck.step, ck.epoch), (7, 2));
        assert_eq!(ck.config, c);
        assert_eq!(ck.vocab, v);
        for id in m.params.ids() {
            let want: Vec<f64> = m.params.data(id).iter().map(|&x| x as f32 as f64).collect();
            assert_eq!(ck.model.params.data(id), want.as_slice());
        }
        assert_eq!(to_bytes(&ck.config, &ck.vocab, &ck.model, 7, 2), a);
    }

    #[test]
    fn errors_are_distinct() {
        let (c, v, m) = tiny();
        let good = to_bytes(&c, &v, &m, 0, 0);

        let mut bad = good.clone();
        bad[0] ^= 1;
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::BadMagic)));

        let cut = &good[..good.len() - 100];
        assert!(matches!(from_bytes(cut), Err(CheckpointError::Truncated(_))));

        let mut flipped = good.clone();
        let n = flipped.len();
        flipped[n - 40] ^= 0x10;
        assert!(matches!(from_bytes(&flipped), Err(CheckpointError::HashMismatch(_))));
    }

    fn rewrite_manifest(bytes: &[u8], edit: impl FnOnce(&mut Manifest)) -> Vec<u8> {
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        edit(&mut manifest);
        let json = serde_json::to_vec(&manifest).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[16 + len..bytes.len() - DIGEST_LEN]);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    #[test]
    fn schema_and_shape_errors() {
        let (c, v, m) = tiny();
        let good = to_bytes(&c, &v, &m, 0, 0);
        let old = rewrite_manifest(&good, |m| m.schema = "tgckpt0".into());
        assert!(matches!(from_bytes(&old), Err(CheckpointError::Schema(s)) if s == "tgckpt0"));
        let reshaped = rewrite_manifest(&good, |m| m.tensors[0].shape.reverse());
        assert!(matches!(from_bytes(&reshaped), Err(CheckpointError::ShapeMismatch { .. })));
    }
}
