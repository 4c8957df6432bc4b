//! Run configuration: one JSON document with a section per stage.

use std::path::Path;

use mmdetect_core::corpus::SynthConfig;
use mmdetect_core::model::ModelConfig;
use mmdetect_core::objective::TrainConfig;
use mmdetect_core::pseudo::DEFAULT_THRESHOLD;
use mmdetect_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoConfig {
    pub threshold: f64,
    /// Seed for the train/val split of kept pseudo rows.
    pub seed: u64,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig {
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    /// `vocab_size` caps the vocabulary built from the training manifest;
    /// the effective config records the size actually used.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pseudo: PseudoConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
