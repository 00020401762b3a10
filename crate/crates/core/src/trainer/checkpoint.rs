use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Optimizer, TrainState};
use crate::policy::{PolicyParams, ValueParams};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read or write checkpoint {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint was written for config {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
}

/// Serialized training state. Weights are flat arrays; each network carries
/// its `in_dim` / `hidden` / `out_dim` shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub step: u64,
    pub config_hash: String,
    pub policy: PolicyParams,
    pub value: ValueParams,
    pub reference: PolicyParams,
    pub policy_opt: Optimizer,
    pub value_opt: Optimizer,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, config_hash: &str) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            step: state.step,
            config_hash: config_hash.to_string(),
            policy: state.policy.clone(),
            value: state.value.clone(),
            reference: state.reference.clone(),
            policy_opt: state.policy_opt.clone(),
            value_opt: state.value_opt.clone(),
        }
    }

    pub fn into_state(self) -> Result<TrainState, CheckpointError> {
        for p in [&self.policy, &self.reference] {
            p.validate().map_err(|e| CheckpointError::Format(e.to_string()))?;
        }
        if !self.value.net.shape_matches() {
            return Err(CheckpointError::Format("value network shape".into()));
        }
        Ok(TrainState {
            step: self.step,
            policy: self.policy,
            value: self.value,
            reference: self.reference,
            policy_opt: self.policy_opt,
            value_opt: self.value_opt,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let json = serde_json::to_string(self).map_err(|e| CheckpointError::Format(e.to_string()))?;
        fs::write(path, json).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(format!("unsupported format {}", ckpt.format)));
        }
        Ok(ckpt)
    }

    pub fn check_config(&self, expected_hash: &str) -> Result<(), CheckpointError> {
        if self.config_hash != expected_hash {
            return Err(CheckpointError::ConfigMismatch {
                expected: expected_hash.to_string(),
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }
}
