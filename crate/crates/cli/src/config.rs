//! Run configuration: one TOML file describing the numeric training setup
//! and the data source, plus the manifest echoed next to every run's
//! outputs so it can be reproduced bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};

use peerstyle_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{AppError, Result};

/// Everything a `train` invocation needs. Missing keys fall back to the
/// desk-scale defaults, so an empty file is a valid smoke-run setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    /// Progress line cadence (steps).
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig { train: TrainConfig::desk(), dataset: DatasetConfig::default(), log_every: 50 }
    }
}

/// Where training images come from: procedural textures or one directory
/// per class on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Procedural scenes and textures; self-contained and deterministic.
    Synthetic {
        /// Generated image edge length (pixels, multiple of 4).
        image_size: usize,
    },
    /// A content directory plus one directory per style class, each holding
    /// PNG or PPM images.
    Folders {
        content_dir: PathBuf,
        style_dirs: Vec<PathBuf>,
    },
}

impl Default for DatasetConfig {
    fn default() -> DatasetConfig {
        DatasetConfig::Synthetic { image_size: 32 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.log_every == 0 {
            return Err(AppError::Config(String::from("log_every must be at least 1")));
        }
        match &self.dataset {
            DatasetConfig::Synthetic { image_size } => {
                if *image_size == 0 || image_size % 4 != 0 {
                    return Err(AppError::Config(format!(
                        "dataset.image_size must be a positive multiple of 4, got {image_size}"
                    )));
                }
                if *image_size < self.train.crop_size {
                    return Err(AppError::Config(format!(
                        "dataset.image_size ({image_size}) is smaller than train.crop_size ({})",
                        self.train.crop_size
                    )));
                }
            }
            DatasetConfig::Folders { style_dirs, .. } => {
                if style_dirs.len() < 2 {
                    return Err(AppError::Config(format!(
                        "folder datasets need at least 2 style directories, got {}",
                        style_dirs.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The fully resolved setup of a run, written alongside its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Crate version that produced the run.
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> RunManifest {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.train.seed,
            config: config.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| AppError::Runtime(format!("manifest serialization: {e}")))?;
        fs::write(path, text)
            .map_err(|e| AppError::io(&format!("writing {}", path.display()), e))
    }
}
