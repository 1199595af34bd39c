//! Binary checkpoint container.
//!
//! Layout: 8 magic bytes, `u32` LE format version, `u32` LE header length,
//! a UTF-8 JSON header, then every parameter as little-endian `f32` in
//! manifest order. The header carries the model configuration (including
//! task label tables), the parameter manifest, the parameter count, a
//! SHA-256 of the payload and the optional training record.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackboneConfig, ModelError, MscConfig, Network, ParamSpec};
use crate::tensor::{SgdConfig, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AERCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a checkpoint was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub augment: bool,
    pub msc: MscConfig,
    /// Learning rate of the fine-tuning run, when this is one.
    pub fine_tune_lr: Option<f64>,
    pub loss_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub record: Option<TrainingRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: BackboneConfig,
    params: Vec<ParamSpec>,
    param_count: usize,
    sha256: String,
    training: Option<TrainingRecord>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: Vec<u8> = self
            .network
            .params()
            .iter()
            .flat_map(|t| t.data().iter().flat_map(|&v| (v as f32).to_le_bytes()))
            .collect();
        let header = Header {
            config: self.network.config().clone(),
            params: Network::param_specs(self.network.config()),
            param_count: self.network.param_count(),
            sha256: hex(&Sha256::digest(&payload)),
            training: self.record.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header is serializable");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 16 {
            return Err(ModelError::Checksum(format!("file is only {} bytes", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(ModelError::FormatVersion("not a checkpoint (bad magic)".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::FormatVersion(format!(
                "version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = word(12) as usize;
        let Some(header_bytes) = bytes.get(16..16 + header_len) else {
            return Err(ModelError::Checksum("header truncated".into()));
        };
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| ModelError::FormatVersion(format!("unreadable header: {e}")))?;
        header
            .config
            .validate()
            .map_err(|e| ModelError::FormatVersion(e.to_string()))?;
        let expected = Network::param_specs(&header.config);
        if header.params != expected {
            let diff = header
                .params
                .iter()
                .zip(&expected)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{} has shape {:?}, config implies {:?}", a.name, a.shape, b.shape))
                .unwrap_or_else(|| {
                    format!("{} parameters listed, config implies {}", header.params.len(), expected.len())
                });
            return Err(ModelError::FormatVersion(format!("parameter manifest disagrees with config: {diff}")));
        }
        let count: usize = expected.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if count != header.param_count {
            return Err(ModelError::FormatVersion(format!(
                "header declares {} parameters, manifest has {count}",
                header.param_count
            )));
        }
        let payload = &bytes[16 + header_len..];
        if payload.len() != 4 * count {
            return Err(ModelError::Checksum(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                4 * count
            )));
        }
        let digest = hex(&Sha256::digest(payload));
        if digest != header.sha256 {
            return Err(ModelError::Checksum(format!("sha256 {digest} does not match header {}", header.sha256)));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        let params = expected
            .iter()
            .map(|p| {
                let n = p.shape.iter().product();
                Tensor::new(p.shape.clone(), values.by_ref().take(n).collect())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            network: Network::from_params(header.config, params)?,
            record: header.training,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
