use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FileKind, Result};
use crate::layers::{init_params, Module, ParamStore};
use crate::tensor::Tensor;

use super::{Model, ModelConfig};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PKDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A model configuration together with its parameters.
///
/// File layout (little-endian): 8-byte magic, u32 version, u64 header
/// length, JSON header `{model, tensors: [{name, shape}]}`, then every
/// tensor's f64 values in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: FileKind::Checkpoint,
        msg: msg.into(),
    }
}

fn integrity_err(msg: impl Into<String>) -> Error {
    Error::Integrity {
        kind: FileKind::Checkpoint,
        msg: msg.into(),
    }
}

impl Checkpoint {
    /// Checks that `params` has exactly the tensors the model declares.
    pub fn new(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let model = Model::new(&config)?;
        params.validate(&model.param_specs())?;
        Ok(Checkpoint { config, params })
    }

    /// Freshly initialised parameters.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let model = Model::new(&config)?;
        let params = init_params(&model.param_specs(), seed)?;
        Ok(Checkpoint { config, params })
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(&self.config)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.config.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(20 + header.len() + self.params.numel() * 8);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(format_err("file is shorter than the fixed header"));
        }
        if bytes[..8] != CHECKPOINT_MAGIC {
            return Err(format_err("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                kind: FileKind::Checkpoint,
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| integrity_err("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| format_err(format!("header: {e}")))?;
        let mut params = ParamStore::new();
        let mut offset = header_end;
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = offset + n * 8;
            if end > bytes.len() {
                return Err(integrity_err(format!("payload truncated in `{}`", entry.name)));
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(entry.shape, data).map_err(|e| integrity_err(e.to_string()))?;
            params.insert(entry.name, t);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(integrity_err(format!("{} trailing bytes", bytes.len() - offset)));
        }
        Checkpoint::new(header.model, params)
    }

    /// Writes the file and returns its SHA-256 hex digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// SHA-256 of the serialised form, identical to the hash of a saved file.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
