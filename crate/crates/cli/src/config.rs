//! The JSON run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use aminet::data::Manifest;
use aminet::network::ArchConfig;
use aminet::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Output locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory for logs, checkpoints and reports (created if missing).
    pub out_dir: PathBuf,
    /// Initial weights for `train`; a fresh initialization from
    /// `train.seed` is used when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: PathBuf::from("runs/default"),
            checkpoint: None,
        }
    }
}

/// Everything a run needs. `data` is required; the other sections default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: Manifest,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Errors name the path.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.arch.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.data.scale != self.arch.scale {
            return Err(CliError::Usage(format!(
                "data.scale {} differs from arch.scale {}",
                self.data.scale, self.arch.scale
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
