use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{toy_dataset, Dataset, SpoofConfig, TrainConfig};

use super::{DatasetManifest, Split};

/// Where training audio comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// tab-separated manifest; relative to the config file when relative
    Manifest { path: PathBuf },
    /// the built-in two-speaker tone set
    Synthetic { clips: usize, length: usize, seed: u64 },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            clips: 8,
            length: 32_768,
            seed: 0,
        }
    }
}

/// Everything a training run needs, stored as TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    /// explicit architecture; by default chosen by `train.desk_scale`
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub spoof: SpoofConfig,
    pub out_dir: PathBuf,
    /// steps between checkpoint writes (0: only at the end)
    pub checkpoint_every: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse and validate; relative paths become relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Manifest { path: p } = &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.as_os_str().is_empty() {
            cfg.out_dir = PathBuf::from("run");
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let DataSource::Synthetic { clips, length, .. } = self.data {
            if clips < 2 || length == 0 {
                return Err(Error::Config("synthetic data needs at least 2 clips of positive length".into()));
            }
        }
        if self.spoof.epochs == 0 || self.spoof.batch_size == 0 {
            return Err(Error::Config("spoof epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Architecture for `n_speakers`; an explicit model must agree.
    pub fn model_config(&self, n_speakers: usize) -> Result<ModelConfig> {
        match &self.model {
            Some(m) if m.n_speakers != n_speakers => Err(Error::Config(format!(
                "model has {} speaker branches, data has {n_speakers} speakers",
                m.n_speakers
            ))),
            Some(m) => Ok(m.clone()),
            None => Ok(self.train.model_config(n_speakers)),
        }
    }

    /// Training and held-out data.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataSource::Manifest { path } => {
                let m = DatasetManifest::load(path)?;
                m.require_splits()?;
                Ok((m.load_split(Split::Train)?, m.load_split(Split::Test)?))
            }
            &DataSource::Synthetic { clips, length, seed } => {
                let train = toy_dataset(clips, length, seed);
                let test = toy_dataset(clips.max(2), length, seed ^ 0x7e57);
                Ok((train, test))
            }
        }
    }
}
