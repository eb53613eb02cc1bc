//! Model checkpoints: parameters plus every config needed to rebuild and
//! re-featurize, as one JSON document.

use std::path::Path;

use nominator_core::embedders::{EmbedError, EmbedderConfig, Model};
use nominator_core::features::FeatureConfig;
use nominator_core::tensor::Params;
use nominator_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub embedder: EmbedderConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub params: Params,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint expects {expected} input features but its feature config yields {found}")]
    FeatureDim { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] EmbedError),
}

impl Checkpoint {
    pub fn new(
        model: &Model,
        features: &FeatureConfig,
        train: &TrainConfig,
        best_epoch: usize,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            embedder: model.config().clone(),
            features: features.clone(),
            train: train.clone(),
            best_epoch,
            params: model.params().clone(),
        }
    }

    /// Validates parameter names and shapes against the embedder config.
    pub fn model(&self) -> Result<Model, CheckpointError> {
        if self.embedder.input_dim != self.features.dim() {
            return Err(CheckpointError::FeatureDim {
                expected: self.embedder.input_dim,
                found: self.features.dim(),
            });
        }
        Ok(Model::from_params(
            self.embedder.clone(),
            self.params.clone(),
        )?)
    }

    pub fn to_json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(self).expect("checkpoint serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CheckpointError> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_slice(bytes)?;
        if v.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: v.format_version,
            });
        }
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Checkpoint::from_json(&bytes)
    }
}
