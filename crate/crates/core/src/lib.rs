//! Multiple-hypothesis autoencoders for reconstruction-error anomaly detection.
//!
//! A single encoder produces a latent vector that `K` decoders reconstruct
//! independently; the reconstruction with the lowest MSE is the model output
//! and its MSE the anomaly score. With `K = 1` this is a plain autoencoder.
//!
//! Modules, bottom-up:
//! - [`tensor`]: dense `f64` matrices.
//! - [`nn`]: dense layers, MSE, Adam, gradient checking.
//! - [`model`]: the MH-AE, the baseline autoencoder, training, model files.
//! - [`anomaly`]: scoring and the `mu + k*sigma` threshold.
//! - [`eval`]: AUROC, ROC curves, per-class statistics, repeated trials.
//! - [`data`]: MNIST IDX files and a synthetic fixture.

pub mod anomaly;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{AnomalyModel, Autoencoder, MhaeModel, ModelConfig, TrainConfig, TrainingMode};
pub use tensor::Matrix;
