//! Experiment configuration: a single JSON file describing the model, the
//! training recipe, the attack grid, and the dataset. Unknown keys are
//! rejected so stale configs fail loudly. CLI flags override file values.

use serde::{Deserialize, Serialize};
use spikegrad::attacks::AttackConfig;
use spikegrad::data::{load_mnist_idx, synth_blobs, synth_digits, Dataset};
use spikegrad::error::{Error, Result};
use spikegrad::model::ModelSpec;
use spikegrad::rng::Rng;
use spikegrad::train::TrainConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "source")]
pub enum DatasetSpec {
    /// MNIST-format IDX files on disk.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Deterministic 28x28 synthetic digit classes.
    Digits {
        n_train: usize,
        n_test: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    /// Gaussian clusters, for quick smoke experiments.
    Blobs {
        n_train: usize,
        n_test: usize,
        classes: usize,
        dim: usize,
        sep: f64,
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
}

fn default_noise() -> f64 {
    0.15
}
fn default_data_seed() -> u64 {
    77
}

impl DatasetSpec {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok((
                load_mnist_idx(train_images, train_labels)?,
                load_mnist_idx(test_images, test_labels)?,
            )),
            DatasetSpec::Digits {
                n_train,
                n_test,
                noise,
                seed,
            } => {
                let all = synth_digits(&mut Rng::new(*seed), n_train + n_test, *noise)?;
                Ok((
                    all.slice(0, *n_train)?,
                    all.slice(*n_train, n_train + n_test)?,
                ))
            }
            DatasetSpec::Blobs {
                n_train,
                n_test,
                classes,
                dim,
                sep,
                seed,
            } => {
                let all = synth_blobs(&mut Rng::new(*seed), n_train + n_test, *classes, *dim, *sep)?;
                Ok((
                    all.slice(0, *n_train)?,
                    all.slice(*n_train, n_train + n_test)?,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Attack grid used by `eval` and `attack`.
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Eta grid for `sweep-eta`; empty means the built-in default grid.
    #[serde(default)]
    pub sweep_etas: Vec<f64>,
}

fn default_eval_batch() -> usize {
    100
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        for a in &self.attacks {
            a.validate()?;
        }
        if self.eval_batch == 0 {
            return Err(Error::Config("eval_batch must be >= 1".into()));
        }
        if self.sweep_etas.iter().any(|&e| e < 0.0) {
            return Err(Error::Config("sweep_etas entries must be >= 0".into()));
        }
        Ok(())
    }
}
