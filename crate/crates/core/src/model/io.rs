//! Versioned binary weights format.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic        4 bytes  "EATW"
//! version      u32
//! config       7 × u64  num_layers, num_heads, model_dim, head_dim,
//!                       max_len, vocab_size, num_classes
//! count        u64      number of f64 values that follow
//! values       count × f64, tensors in ModelWeights::tensors() order
//! checksum     32 bytes SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelConfig, ModelError, ModelWeights};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"EATW";
const CHECKSUM_LEN: usize = 32;
const HEADER_LEN: usize = 4 + 4 + 7 * 8 + 8;

#[derive(Debug, Error)]
pub enum WeightsIoError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checksum mismatch (file truncated or corrupted)")]
    Checksum,
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found}, expected {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<(), WeightsIoError> {
    let path = path.as_ref();
    let bytes = encode(weights);
    fs::write(path, bytes).map_err(|source| WeightsIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights, WeightsIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

/// Like [`load_weights`] but fails unless the embedded config equals `expected`.
pub fn load_weights_expecting(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
) -> Result<ModelWeights, WeightsIoError> {
    let w = load_weights(path)?;
    if &w.config != expected {
        return Err(WeightsIoError::Shape(format!(
            "file holds {:?}, caller expects {:?}",
            w.config, expected
        )));
    }
    Ok(w)
}

pub(crate) fn encode(weights: &ModelWeights) -> Vec<u8> {
    let c = &weights.config;
    let count = weights.num_parameters();
    let mut out = Vec::with_capacity(HEADER_LEN + count * 8 + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        c.num_layers,
        c.num_heads,
        c.model_dim,
        c.head_dim,
        c.max_len,
        c.vocab_size,
        c.num_classes,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (_, m) in weights.tensors() {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ModelWeights, WeightsIoError> {
    if bytes.len() < CHECKSUM_LEN {
        return Err(WeightsIoError::Checksum);
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(WeightsIoError::Checksum);
    }
    if body.len() < HEADER_LEN {
        return Err(WeightsIoError::Shape("header too short".into()));
    }
    if &body[..4] != MAGIC {
        return Err(WeightsIoError::BadMagic);
    }
    let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(WeightsIoError::Version { found: version });
    }
    let mut fields = [0usize; 7];
    for (i, f) in fields.iter_mut().enumerate() {
        let at = 8 + i * 8;
        *f = u64::from_le_bytes(body[at..at + 8].try_into().expect("8 bytes")) as usize;
    }
    let config = ModelConfig {
        num_layers: fields[0],
        num_heads: fields[1],
        model_dim: fields[2],
        head_dim: fields[3],
        max_len: fields[4],
        vocab_size: fields[5],
        num_classes: fields[6],
    };
    let mut weights = ModelWeights::zeros(config).map_err(|e| match e {
        ModelError::InvalidConfig(m) => WeightsIoError::Shape(m),
        other => WeightsIoError::Shape(other.to_string()),
    })?;
    let at = 8 + 7 * 8;
    let count = u64::from_le_bytes(body[at..at + 8].try_into().expect("8 bytes")) as usize;
    let payload = &body[HEADER_LEN..];
    if count != weights.num_parameters() || payload.len() != count * 8 {
        return Err(WeightsIoError::Shape(format!(
            "config implies {} values, header says {count}, payload holds {}",
            weights.num_parameters(),
            payload.len() / 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for (name, m) in weights.tensors_mut() {
        for v in m.data_mut() {
            let x = values.next().expect("count checked");
            if !x.is_finite() {
                return Err(WeightsIoError::Shape(format!("non-finite value in {name}")));
            }
            *v = x;
        }
    }
    Ok(weights)
}
