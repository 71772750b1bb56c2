//! Optimization: Adam, batch assembly, alternating discriminator and
//! encoder/generator updates, checkpoints and the spoofing classifier.

mod adam;
mod batch;
mod checkpoint;
mod spoof;
mod step;
mod synthetic;

pub use adam::{Adam, AdamConfig};
pub use batch::{crop_cyclic, make_batch, random_derangement, Batch, Dataset, Utterance};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use spoof::{cross_entropy, evaluate_spoofing, train_spoof_classifier, SpoofClassifier, SpoofConfig, SpoofReport};
pub use step::{LossLog, StepReport, Trainer};
pub use synthetic::{toy_dataset, ToySpeaker, TOY_SPEAKERS};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{ModelConfig, HOP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// crop length in samples, a multiple of 256
    pub clip_length: usize,
    pub epochs: usize,
    /// total steps; 0 derives the count from `epochs`
    pub steps: u64,
    pub seed: u64,
    pub loss: LossWeights,
    pub augment: AugmentConfig,
    /// reduced-width model for CPU runs
    pub desk_scale: bool,
    /// steps between log records
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            adam_eps: 1e-8,
            batch_size: 8,
            clip_length: 32_768,
            epochs: 1,
            steps: 0,
            seed: 0,
            loss: LossWeights::default(),
            augment: AugmentConfig::default(),
            desk_scale: true,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_length == 0 || !self.clip_length.is_multiple_of(HOP) {
            return Err(Error::Config(format!(
                "clip_length {} must be a positive multiple of {HOP}",
                self.clip_length
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size {} must be at least 2 to pair each item with another",
                self.batch_size
            )));
        }
        if self.clip_length < self.augment.min_jitter_len() {
            return Err(Error::Config(format!("clip_length {} too short for target jitter", self.clip_length)));
        }
        let hyper = [self.lr, self.adam_beta1, self.adam_beta2, self.adam_eps];
        if !(self.lr > 0.0 && hyper.iter().all(|v| v.is_finite()))
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps <= 0.0
        {
            return Err(Error::Config(format!("invalid optimizer settings lr/b1/b2/eps = {hyper:?}")));
        }
        self.loss.validate()?;
        self.augment.validate()
    }

    /// Desk or full network for `n_speakers`.
    pub fn model_config(&self, n_speakers: usize) -> ModelConfig {
        if self.desk_scale {
            ModelConfig::desk(n_speakers)
        } else {
            ModelConfig::full(n_speakers)
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// `steps` if set, else one pass over the utterances per epoch.
    pub fn total_steps(&self, n_utterances: usize) -> u64 {
        if self.steps > 0 {
            return self.steps;
        }
        let per_epoch = n_utterances.div_ceil(self.batch_size).max(1);
        (per_epoch * self.epochs) as u64
    }
}
