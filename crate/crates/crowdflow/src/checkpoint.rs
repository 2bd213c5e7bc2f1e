//! Versioned JSON checkpoints: named parameter arrays with shapes, the
//! optimizer state, the step counter, and a full config snapshot.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::pipeline::MatcherParams;
use crate::train::OptimizerState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config: Config,
    pub params: MatcherParams,
    pub optimizer: OptimizerState,
    /// Relative path of the run manifest that produced this file.
    pub manifest: Option<String>,
}

impl Checkpoint {
    pub fn new(config: Config, params: MatcherParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: 0,
            config,
            params,
            optimizer: OptimizerState::new(),
            manifest: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        // Check the version tag before full decoding so format drift gets a
        // clear diagnostic.
        let probe: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("checkpoint {} is not JSON: {e}", path.display())))?;
        match probe.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Data(format!(
                    "checkpoint {} has version {v}, expected {CHECKPOINT_VERSION}",
                    path.display()
                )))
            }
            None => {
                return Err(Error::Data(format!(
                    "checkpoint {} lacks a version field",
                    path.display()
                )))
            }
        }
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("checkpoint {} is malformed: {e}", path.display())))?;
        Ok(ckpt)
    }
}
