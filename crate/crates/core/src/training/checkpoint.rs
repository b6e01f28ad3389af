//! Binary checkpoint files.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, the UTF-8
//! JSON header, every parameter array as little-endian `f64` in manifest
//! order, and finally the SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochRecord, TrainConfig};
use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::model::{LstmParams, ModelConfig, ModelParams, GROUP_NAMES};
use crate::{Error, Real, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ENTLIB1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Epoch whose parameters were kept.
    pub epoch: usize,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in values from the start of the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    vocab_digest: String,
    vocab: Vocabulary,
    meta: TrainingMeta,
    arrays: Vec<ArrayEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn vocab_digest(&self) -> String {
        self.vocab.digest()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut offset = 0;
        for (name, t) in self.params.groups() {
            arrays.push(ArrayEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            model_config: self.model_config.clone(),
            vocab_digest: self.vocab.digest(),
            vocab: self.vocab.clone(),
            meta: self.meta.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 8 + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.groups() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f64).to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 + 32 {
            return Err(bad("file is truncated"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad(
                "content digest mismatch (file is corrupt or truncated)",
            ));
        }
        let len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body
            .get(16..16 + len)
            .ok_or_else(|| bad("header is truncated"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "format version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.format_version
            )));
        }
        if header.vocab.digest() != header.vocab_digest {
            return Err(bad("embedded vocabulary does not match its digest"));
        }
        let payload = &body[16 + len..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let values: Vec<Real> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")) as Real)
            .collect();

        let mut arrays = Vec::new();
        let mut expected_offset = 0;
        for (i, a) in header.arrays.iter().enumerate() {
            if GROUP_NAMES.get(i) != Some(&a.name.as_str()) || a.offset != expected_offset {
                return Err(bad(format!(
                    "unexpected array '{}' at position {i}",
                    a.name
                )));
            }
            let n: usize = a.shape.iter().product();
            let data = values
                .get(a.offset..a.offset + n)
                .ok_or_else(|| bad(format!("array '{}' runs past the payload", a.name)))?;
            arrays.push(Tensor::new(a.shape.clone(), data.to_vec())?);
            expected_offset += n;
        }
        if expected_offset != values.len() {
            return Err(bad("payload length does not match the array manifest"));
        }
        if arrays.len() != 10 && arrays.len() != 11 {
            return Err(bad(format!(
                "expected 10 or 11 arrays, found {}",
                arrays.len()
            )));
        }
        let mut it = arrays.into_iter();
        let mut next = || it.next().expect("counted above");
        let params = ModelParams {
            token_emb: next(),
            speaker_emb: next(),
            forward: LstmParams {
                w_input: next(),
                w_hidden: next(),
                bias: next(),
            },
            backward: LstmParams {
                w_input: next(),
                w_hidden: next(),
                bias: next(),
            },
            w_out: next(),
            b_out: next(),
            entity_lib: if header.arrays.len() == 11 {
                Some(next())
            } else {
                None
            },
        };
        if params.variant() != header.model_config.variant {
            return Err(bad("arrays do not match the configured variant"));
        }
        Ok(Checkpoint {
            model_config: header.model_config,
            vocab: header.vocab,
            params,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and refuses it unless it was trained with `vocab`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path.as_ref())?;
    let (theirs, ours) = (ckpt.vocab_digest(), vocab.digest());
    if theirs != ours {
        return Err(Error::config(format!(
            "{}: vocabulary digest {theirs} differs from the run's {ours}",
            path.as_ref().display()
        )));
    }
    Ok(ckpt)
}
