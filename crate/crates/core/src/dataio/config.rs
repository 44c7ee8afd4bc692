//! Run configuration in TOML. Every field has a default, so a file only
//! lists what it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amf::AmfConfig;
use crate::augmentation::AugmentConfig;
use crate::backends::BackendDescriptor;
use crate::error::{Error, Result};
use crate::music::{BudgetMode, MusicConfig};
use crate::teacher_student::TrainConfig;
use crate::toy::ToyTaskConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub freeze_heads: bool,
    pub pad: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainOptions {
            epochs: 10,
            alpha: t.alpha,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            freeze_heads: t.freeze_heads,
            pad: t.pad,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathOptions {
    /// Interaction list, one `name|gerund[|preposition]` per line.
    pub actions: Option<PathBuf>,
    /// Object list, one `[coco_id] name` per line.
    pub objects: Option<PathBuf>,
    pub human_words: Option<PathBuf>,
    pub scene_words: Option<PathBuf>,
    pub scene_map: Option<PathBuf>,
    pub frequency_table: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: BudgetMode,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub music: MusicConfig,
    pub amf: AmfConfig,
    pub train: TrainOptions,
    /// Augmentation for training; absent means the trainer's default,
    /// or the toy settings for toy training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentConfig>,
    pub backend: BackendDescriptor,
    pub paths: PathOptions,
    /// Procedural world drawn by the mock backend and by `toy-data`.
    pub toy: ToyTaskConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: BudgetMode::Hico,
            workers: 0,
            music: MusicConfig::default(),
            amf: AmfConfig::default(),
            train: TrainOptions::default(),
            augment: None,
            backend: BackendDescriptor::default(),
            paths: PathOptions::default(),
            toy: ToyTaskConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.music.validate()?;
        if !(0.0..=1.0).contains(&self.amf.tau_nms) {
            return Err(Error::Config(format!("tau_nms = {} outside [0, 1]", self.amf.tau_nms)));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.train_config()?.validate()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            alpha: self.train.alpha,
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            freeze_heads: self.train.freeze_heads,
            pad: self.train.pad,
            seed: self.seed,
            amf: self.amf.clone(),
            augment: self.augment.clone().unwrap_or_default(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and parses; validation is left to the caller so flags can
    /// still override values.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
