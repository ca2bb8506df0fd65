use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::net::{Preset, DEFAULT_INPUT_SIZE};
use crate::preprocess::AugmentationRanges;

/// Training hyperparameters. Defaults follow the published recipe: lr 5e-4,
/// momentum 0.9, 25 epochs, batch 64.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub preset: Preset,
    pub input_size: usize,
    pub augmentation: AugmentationRanges,
    /// Re-estimate batch-norm running statistics from the un-augmented
    /// training images after every epoch.
    pub recalibrate_bn: bool,
    /// Image paths in manifests are relative to this directory.
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            momentum: 0.9,
            epochs: 25,
            batch_size: 64,
            seed: 0,
            preset: Preset::S,
            input_size: DEFAULT_INPUT_SIZE,
            augmentation: AugmentationRanges::default(),
            recalibrate_bn: true,
            data_dir: PathBuf::from("."),
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".to_string()));
        }
        if self.preset == Preset::Custom {
            return Err(Error::Config("training needs preset L or S".to_string()));
        }
        self.augmentation.validate()
    }
}
