//! Run configuration: a JSON file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use mhae_core::eval::{EvalConfig, ExperimentConfig, ModelKind};
use mhae_core::nn::{Activation, AdamConfig};
use mhae_core::{ModelConfig, TrainConfig, TrainingMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "MHAE_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub normal_class: u8,
    pub model: ModelKind,
    pub k: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub hidden_activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub training_mode: TrainingMode,
    pub threshold_multiplier: f64,
    pub two_sided: bool,
    pub histogram_bins: usize,
    /// Use only the first N normal-class training images.
    pub train_subset: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub jobs: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            data_dir: None,
            normal_class: 1,
            model: ModelKind::Mhae,
            k: model.k,
            hidden_dims: model.hidden_dims,
            latent_dim: model.latent_dim,
            hidden_activation: model.hidden_activation,
            epochs: TrainConfig::default().epochs,
            batch_size: TrainConfig::default().batch_size,
            lr: AdamConfig::default().lr,
            training_mode: TrainingMode::Independent,
            threshold_multiplier: 1.5,
            two_sided: false,
            histogram_bins: 50,
            train_subset: None,
            trials: 30,
            seed: 0,
            jobs: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Values given on the command line; `None` leaves the config value alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub jobs: Option<usize>,
    pub model: Option<ModelKind>,
    pub k: Option<usize>,
    pub training_mode: Option<TrainingMode>,
    pub threshold_multiplier: Option<f64>,
    pub epochs: Option<usize>,
    pub train_subset: Option<usize>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Loads `path` if given, applies flag overrides, then validates.
    pub fn resolve(path: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.data_dir {
            self.data_dir = Some(v);
        }
        if let Some(v) = o.output_dir {
            self.output_dir = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.trials {
            self.trials = v;
        }
        if let Some(v) = o.jobs {
            self.jobs = v;
        }
        if let Some(v) = o.model {
            self.model = v;
        }
        if let Some(v) = o.k {
            self.k = v;
        }
        if let Some(v) = o.training_mode {
            self.training_mode = v;
        }
        if let Some(v) = o.threshold_multiplier {
            self.threshold_multiplier = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.train_subset {
            self.train_subset = Some(v);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::config(m));
        if self.normal_class > 9 {
            return fail(format!("normal_class {} is not a digit", self.normal_class));
        }
        if !(1..=64).contains(&self.k) {
            return fail(format!("k = {} outside 1..=64", self.k));
        }
        if self.latent_dim == 0 || self.hidden_dims.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr = {} must be finite and nonnegative", self.lr));
        }
        if !(self.threshold_multiplier.is_finite() && self.threshold_multiplier >= 0.0) {
            return fail(format!(
                "threshold_multiplier = {} must be finite and nonnegative",
                self.threshold_multiplier
            ));
        }
        if !(1..=10_000).contains(&self.histogram_bins) {
            return fail(format!(
                "histogram_bins = {} outside 1..=10000",
                self.histogram_bins
            ));
        }
        if self.train_subset == Some(0) {
            return fail("train_subset must be at least 1".into());
        }
        if self.trials == 0 || self.jobs == 0 {
            return fail("trials and jobs must be at least 1".into());
        }
        Ok(())
    }

    /// Flag, then config file, then `MHAE_DATA_DIR`.
    pub fn data_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self
            .data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                CliError::config(format!(
                    "no data directory: pass --data-dir or set {DATA_DIR_ENV}"
                ))
            })?;
        if !dir.is_dir() {
            return Err(CliError::config(format!(
                "data directory {} does not exist",
                dir.display()
            )));
        }
        Ok(dir)
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            latent_dim: self.latent_dim,
            hidden_activation: self.hidden_activation,
            k: match self.model {
                ModelKind::Ae => 1,
                ModelKind::Mhae => self.k,
            },
            mode: self.training_mode,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            normal_class: self.normal_class,
            threshold_multiplier: self.threshold_multiplier,
            two_sided: self.two_sided,
            histogram_bins: self.histogram_bins,
        }
    }

    /// Comparison settings; the MH-AE uses `k`, the baseline always one decoder.
    pub fn experiment_config(&self, input_dim: usize) -> ExperimentConfig {
        let mut model = self.model_config(input_dim);
        model.k = self.k;
        ExperimentConfig {
            model,
            train: self.train_config(),
            eval: self.eval_config(),
            base_seed: self.seed,
            jobs: self.jobs,
        }
    }
}
