//! Experiment configuration file (TOML).
//!
//! Every table is optional and every key falls back to its default:
//!
//! ```toml
//! [model]
//! n_template = 512
//! n_search = 1024
//! feat_dim = 64
//! mfa_direction = "specific"
//!
//! [model.bev_grid]
//! x_range = [-4.8, 4.8]
//! y_range = [-4.8, 4.8]
//! z_range = [-2.0, 2.0]
//! pixel_size = 0.3
//! nx = 32
//! ny = 32
//!
//! [loss]
//! lambda_z = 2.0
//!
//! [train]
//! steps = 2000
//! optimizer = { kind = "adam", beta1 = 0.9, beta2 = 0.999, eps = 1e-8 }
//!
//! [tracker]
//! template = "first"
//!
//! [synth]
//! n_frames = 20
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::tracker::TrackerConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub synth: SynthConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.synth.validate()
    }
}
