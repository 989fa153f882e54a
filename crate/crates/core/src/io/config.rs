//! TOML configuration. Every section is optional and unknown keys are
//! rejected.
//!
//! ```toml
//! seed = 0
//!
//! [train]
//! epochs = 30
//! batch_size = 16
//! learning_rate = 1e-4
//! weight_decay = 1e-4
//! input_size = 256
//! mode = "TA+MC"
//!
//! [loss]
//! lambda_loc = 1.0
//! lambda_exp = 1.0
//! lambda_color = 0.2
//! lambda_tv = 0.1
//! ```
//!
//! Further sections: `exposure`, `guidance`, `enhancement`, `metrics`,
//! `tracker`, `synth`, `paths`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::synth::SynthConfig;
use crate::enhancement::{AlphaSource, Mode};
use crate::error::{Error, Result};
use crate::evaluation::{MetricConfig, TrackerConfig};
use crate::guidance::{LabelStyle, Reduction};
use crate::losses::{ExposureConfig, LossWeights};
use crate::training::{LrSchedule, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub input_size: usize,
    pub mode: Mode,
    pub lr_schedule: LrSchedule,
    pub hflip: bool,
    /// Use every n-th annotated frame of each training sequence.
    pub frame_stride: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            input_size: t.input_size,
            mode: t.mode,
            lr_schedule: t.lr_schedule,
            hflip: t.hflip,
            frame_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSection {
    pub label_style: LabelStyle,
    pub loc_reduction: Reduction,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancementSection {
    pub alpha_source: AlphaSource,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub seed: u64,
    pub train: TrainSection,
    pub loss: LossWeights,
    pub exposure: ExposureConfig,
    pub guidance: GuidanceSection,
    pub enhancement: EnhancementSection,
    pub metrics: MetricConfig,
    pub tracker: TrackerConfig,
    pub synth: SynthConfig,
    pub paths: PathsSection,
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, "<string>")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| -> Error { ConfigError::Invalid(e.to_string()).into() };
        if self.train.frame_stride == 0 {
            return Err(ConfigError::Invalid("train.frame_stride must be positive".into()).into());
        }
        self.train_config().validate().map_err(wrap)?;
        self.metrics.validate().map_err(wrap)?;
        self.tracker.validate().map_err(wrap)?;
        self.synth.validate().map_err(wrap)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            input_size: self.train.input_size,
            seed: self.seed,
            mode: self.train.mode,
            loss: self.loss,
            exposure: self.exposure,
            lr_schedule: self.train.lr_schedule,
            hflip: self.train.hflip,
            label_style: self.guidance.label_style,
            loc_reduction: self.guidance.loc_reduction,
        }
    }
}
