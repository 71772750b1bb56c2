//! Speaker embedding file, little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `NVCE`                              |
//! | 4     | format version (`u32`, currently 1)       |
//! | 4     | `d_spk` (`u32`)                           |
//! | 32    | SHA-256 of the model config JSON          |
//! | 4·d   | `d_spk` values (`f32`)                    |

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"NVCE";
pub const EMBEDDING_VERSION: u32 = 1;

/// SHA-256 of the JSON form of `cfg`.
pub fn config_digest(cfg: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("model config serializes");
    Sha256::digest(&json).into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    pub values: Vec<f32>,
    pub config_digest: [u8; 32],
}

impl SpeakerEmbedding {
    pub fn new(values: Vec<f32>, cfg: &ModelConfig) -> Self {
        SpeakerEmbedding {
            values,
            config_digest: config_digest(cfg),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(44 + 4 * self.values.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 44 || &bytes[..4] != EMBEDDING_MAGIC {
            return Err(Error::Format("not a speaker embedding file".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        if word(4) != EMBEDDING_VERSION {
            return Err(Error::Incompatible(format!("embedding file version {}", word(4))));
        }
        let d = word(8) as usize;
        if bytes.len() != 44 + 4 * d {
            return Err(Error::Format(format!(
                "embedding header says {d} values, file holds {} bytes",
                bytes.len()
            )));
        }
        let values = bytes[44..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(SpeakerEmbedding {
            values,
            config_digest: bytes[12..44].try_into().expect("32 bytes"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Error unless the embedding was produced by a model with `cfg`.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        if self.values.len() != cfg.d_spk {
            return Err(Error::Incompatible(format!(
                "embedding has {} values, model expects d_spk = {}",
                self.values.len(),
                cfg.d_spk
            )));
        }
        if self.config_digest != config_digest(cfg) {
            return Err(Error::Incompatible("embedding was computed by a different model configuration".into()));
        }
        Ok(())
    }
}
