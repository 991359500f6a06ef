//! Experiment configuration, stored as TOML with `[data]`, `[model]`,
//! `[train]` and `[output]` sections. Every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::model::BackboneConfig;

/// Environment variable naming the directory that holds one sub-directory
/// per dataset (`mnist/`, `fashion-mnist/`, `cifar10/`).
pub const DATA_ROOT_ENV: &str = "QAE_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    /// Directory with the dataset files. Falls back to `$QAE_DATA_ROOT/<dataset>`.
    pub dir: Option<PathBuf>,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    /// Seed for the subset permutations, independent of `train.seed`.
    pub subset_seed: u64,
    /// Per-channel standardisation using training-set statistics.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            dir: None,
            train_subset: None,
            test_subset: None,
            subset_seed: 0,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub seed: u64,
    pub eval_batch_size: usize,
    /// Adds wall-clock seconds to each metrics record. Off by default so
    /// that metrics files are reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            seed: 0,
            eval_batch_size: 250,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: BackboneConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.shape_trace()?;
        self.model.attention_block()?;
        if self.train.batch_size == 0 || self.train.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.train.lr.is_nan() || self.train.lr <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.train.lr
            )));
        }
        Ok(())
    }

    /// Checks that the model input matches the configured dataset's images.
    pub fn check_dataset_shape(&self) -> Result<()> {
        let expected_channels = match self.data.dataset {
            DatasetKind::Cifar10 => (3, 32),
            DatasetKind::Mnist | DatasetKind::FashionMnist => (1, 28),
        };
        if (self.model.in_channels, self.model.input_size) != expected_channels {
            return Err(Error::Config(format!(
                "{} images are {}×{s}×{s}, model expects {}×{}×{}",
                self.data.dataset.name(),
                expected_channels.0,
                self.model.in_channels,
                self.model.input_size,
                self.model.input_size,
                s = expected_channels.1,
            )));
        }
        Ok(())
    }

    /// TOML of everything that affects a run's results, leaving out the
    /// output directory.
    pub fn canonical_toml(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        canonical.to_toml()
    }

    /// Hex prefix of the SHA-256 of [`ExperimentConfig::canonical_toml`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        let dir = match &self.data.dir {
            Some(dir) => dir.clone(),
            None => {
                let root = std::env::var_os(DATA_ROOT_ENV).ok_or_else(|| {
                    Error::Config(format!(
                        "no data.dir in the config and {DATA_ROOT_ENV} is not set"
                    ))
                })?;
                PathBuf::from(root).join(self.data.dataset.name())
            }
        };
        if !dir.is_dir() {
            return Err(Error::data(
                &dir,
                crate::error::DataErrorKind::Unreadable("dataset directory does not exist".into()),
            ));
        }
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;

    #[test]
    fn defaults_match_mnist_qae() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.model, BackboneConfig::mnist(AttentionKind::Qae));
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.model.dropout, 0.5);
        assert_eq!(cfg.model.se_reduction, 4);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            [data]
            dataset = "cifar10"
            train_subset = 100

            [model]
            in_channels = 3
            input_size = 32
            attention = "se"
            entanglement = "ring"

            [train]
            epochs = 2
            seed = 9
            "#,
        )
        .unwrap();
        assert_eq!(cfg.data.dataset, DatasetKind::Cifar10);
        assert_eq!(cfg.model.attention, AttentionKind::Se);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.model.fc_dims, vec![256, 128]);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("[model]\nqubits = 3").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nbogus = 1").is_err());
        let cifar = ExperimentConfig::from_toml("[data]\ndataset = \"cifar10\"").unwrap();
        assert!(cifar.check_dataset_shape().is_err());
        assert!(ExperimentConfig::default().check_dataset_shape().is_ok());
        assert!(ExperimentConfig::from_toml("[train]\nlr = 0.0").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nbatch_size = 0").is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
