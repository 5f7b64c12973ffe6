//! Run configuration: one TOML file holding every tunable of a training run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algo::{Mode, NetConfig, TaskConfig, TrainConfig};
use crate::error::{MasqError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Run directory; relative paths resolve against the working directory.
    pub out_dir: PathBuf,
    /// Fan rollouts and gradient chunks out over threads. Results do not
    /// depend on this flag.
    pub parallel: bool,
    /// Write a checkpoint every this many updates (0 = final only).
    pub checkpoint_every: usize,
    pub train: TrainConfig,
    pub net: NetConfig,
    pub task: TaskConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Masq,
            out_dir: PathBuf::from("runs/default"),
            parallel: true,
            checkpoint_every: 50,
            train: TrainConfig::default(),
            net: NetConfig::default(),
            task: TaskConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.task.validate()?;
        if self.net.actor_hidden.contains(&0) || self.net.critic_hidden.contains(&0) {
            return Err(MasqError::Config(
                "hidden layer widths must be positive".into(),
            ));
        }
        if !(self.net.actor_output_gain.is_finite() && self.net.init_logstd.is_finite()) {
            return Err(MasqError::Config(
                "actor_output_gain and init_logstd must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| MasqError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MasqError::Config(e.to_string()))
    }

    /// Read and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MasqError::io(path, e))?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| MasqError::io(path, e))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_toml_string()?.as_bytes()).into())
    }
}
