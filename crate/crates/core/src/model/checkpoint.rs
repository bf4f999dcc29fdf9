//! Single-file checkpoint container.
//!
//! ```text
//! b"DCISCKPT" | version: u32 LE | header_len: u32 LE | header JSON | f32 LE data
//! ```
//!
//! The header holds the model config, training metadata, the tensor table
//! (name, shape, offset in elements) and the SHA-256 of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::{ParamLayout, TensorSpec};
use super::transformer::ToyModel;
use crate::error::CheckpointError;
use crate::io::write_atomic;

pub const MAGIC: &[u8; 8] = b"DCISCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub corpus_fingerprint: String,
    pub seed: u64,
    /// Provenance of the factors the model was last trained under.
    #[serde(default)]
    pub factors_provenance: Option<String>,
    /// Effective run configuration, echoed for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: TrainingMeta,
    tensors: Vec<TensorSpec>,
    num_elements: usize,
    checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ToyModel<f32>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(model: ToyModel<f32>, meta: TrainingMeta) -> Self {
        Self { model, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::with_capacity(self.model.params().len() * 4);
        for p in self.model.params() {
            data.extend_from_slice(&p.to_le_bytes());
        }
        let header = Header {
            config: self.model.config().clone(),
            meta: self.meta.clone(),
            tensors: self.model.layout().tensors().to_vec(),
            num_elements: self.model.params().len(),
            checksum: hex::encode(Sha256::digest(&data)),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let word = |at: usize| -> Result<u32, CheckpointError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| corrupt("truncated preamble"))
        };
        let version = word(8)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = word(12)? as usize;
        let header_bytes = bytes
            .get(16..16 + header_len)
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        let data = &bytes[16 + header_len..];
        if data.len() != header.num_elements * 4 {
            return Err(CheckpointError::Corrupt(format!(
                "data section has {} bytes, header declares {} floats",
                data.len(),
                header.num_elements
            )));
        }
        if hex::encode(Sha256::digest(data)) != header.checksum {
            return Err(corrupt("checksum mismatch"));
        }
        let layout = ParamLayout::new(&header.config);
        if layout.tensors() != header.tensors.as_slice() {
            return Err(corrupt("tensor table does not match config"));
        }
        let params = data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let model = ToyModel::from_params(header.config, params)?;
        Ok(Self {
            model,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
