//! Run configuration: one JSON document with a section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swingup::control::Gains;
use swingup::env::EnvConfig;
use swingup::learn::TrainConfig;
use swingup::model::ModelParams;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelParams,
    pub gains: Gains,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Master seed. Overrides `train.seed` and seeds every command.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            gains: Gains::default(),
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Strict parse; unknown keys are reported with their full path.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Apply command-line overrides; the train seed always follows `seed`.
    pub fn with_overrides(mut self, seed: Option<u64>, output_dir: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(d) = output_dir {
            self.output_dir = d;
        }
        self.train.seed = self.seed;
        self
    }

    /// Every section, with the full model rules (including the step ceiling).
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.validate_except_step()
    }

    /// As [`RunConfig::validate`] but lets `model.dt` exceed the ceiling, so
    /// `check` can demonstrate what a coarse step does.
    pub fn validate_except_step(&self) -> Result<(), CliError> {
        self.model.validate_structure()?;
        if !(self.model.dt.is_finite() && self.model.dt > 0.0) {
            return Err(CliError::Config("at `model.dt`: must be finite and > 0".into()));
        }
        self.gains.validate()?;
        self.env.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
