//! The multiple-hypothesis autoencoder and its single-decoder baseline.
//!
//! One encoder maps each input to a latent vector `z`. The same `z` feeds
//! `K` decoders, each producing a reconstruction. The reconstruction with the
//! smallest MSE against the input is the model output, and that MSE is the
//! sample's anomaly score.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mse_grad, per_sample_mse, Activation, AdamConfig, DenseLayer, LayerStack};
use crate::tensor::Matrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// ChaCha stream used for minibatch shuffling; init streams are 0..=K.
const SHUFFLE_STREAM: u64 = u64::MAX;

/// How decoder gradients are routed during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    /// Every decoder is trained on its own MSE for every sample; the encoder
    /// receives the mean of the decoders' latent gradients.
    #[default]
    Independent,
    /// Winner-take-all: per sample only the best decoder, and the encoder
    /// through it, receives gradient.
    Wta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder hidden widths; decoders mirror them in reverse.
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    /// Activation of every hidden layer. The latent layer is always linear
    /// and the reconstruction layer always sigmoid.
    #[serde(default = "default_hidden_activation")]
    pub hidden_activation: Activation,
    /// Number of decoders (hypotheses).
    pub k: usize,
    pub mode: TrainingMode,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 784,
            hidden_dims: vec![256, 64],
            latent_dim: 16,
            hidden_activation: default_hidden_activation(),
            k: 3,
            mode: TrainingMode::Independent,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

fn default_hidden_activation() -> Activation {
    Activation::Relu
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} out of range",
                a.lr
            )));
        }
        if !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || a.eps.is_nan()
            || a.eps <= 0.0
        {
            return Err(Error::Config(
                "adam betas must lie in [0,1) and eps be positive".into(),
            ));
        }
        Ok(())
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.latent_dim);
        dims
    }

    fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend(self.hidden_dims.iter().rev());
        dims.push(self.input_dim);
        dims
    }

    fn build_encoder(&self) -> Result<LayerStack> {
        let mut rng = init_rng(self.seed, 0);
        LayerStack::build(
            &self.encoder_dims(),
            self.hidden_activation,
            Activation::Identity,
            self.adam,
            &mut rng,
        )
    }

    /// Decoder `k` draws from its own ChaCha stream, so decoders differ from
    /// each other and from the encoder but are fixed by the seed.
    fn build_decoder(&self, k: usize) -> Result<LayerStack> {
        let mut rng = init_rng(self.seed, k as u64 + 1);
        LayerStack::build(
            &self.decoder_dims(),
            self.hidden_activation,
            Activation::Sigmoid,
            self.adam,
            &mut rng,
        )
    }
}

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index of the smallest loss; ties go to the lowest index.
pub fn select_winner(losses: &[f64]) -> Result<usize> {
    if losses.is_empty() {
        return Err(Error::Usage("select_winner needs at least one loss".into()));
    }
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate().skip(1) {
        if l < losses[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Everything the model computes for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisOutput {
    pub z: Matrix,
    pub reconstructions: Vec<Matrix>,
    pub losses: Vec<f64>,
    pub winner: usize,
}

/// Batch form of [`HypothesisOutput`]: `losses[k][s]` is decoder `k` on sample `s`.
#[derive(Clone, Debug)]
pub struct BatchHypotheses {
    pub z: Matrix,
    pub reconstructions: Vec<Matrix>,
    pub losses: Vec<Vec<f64>>,
    pub winners: Vec<usize>,
}

impl BatchHypotheses {
    fn new(z: Matrix, reconstructions: Vec<Matrix>, losses: Vec<Vec<f64>>) -> Result<Self> {
        let n = z.rows();
        let mut winners = Vec::with_capacity(n);
        let mut column = vec![0.0; losses.len()];
        for s in 0..n {
            for (c, l) in column.iter_mut().zip(&losses) {
                *c = l[s];
            }
            winners.push(select_winner(&column)?);
        }
        Ok(Self {
            z,
            reconstructions,
            losses,
            winners,
        })
    }

    /// Winning loss per sample.
    pub fn min_losses(&self) -> Vec<f64> {
        self.winners
            .iter()
            .enumerate()
            .map(|(s, &w)| self.losses[w][s])
            .collect()
    }

    /// Winning reconstruction per sample, stacked.
    pub fn selected(&self) -> Matrix {
        let cols = self.reconstructions[0].cols();
        let mut out = Matrix::zeros(self.winners.len(), cols);
        for (s, &w) in self.winners.iter().enumerate() {
            out.row_mut(s)
                .copy_from_slice(self.reconstructions[w].row(s));
        }
        out
    }

    pub fn into_samples(self) -> Vec<HypothesisOutput> {
        (0..self.winners.len())
            .map(|s| HypothesisOutput {
                z: Matrix::row_vector(self.z.row(s).to_vec()),
                reconstructions: self
                    .reconstructions
                    .iter()
                    .map(|r| Matrix::row_vector(r.row(s).to_vec()))
                    .collect(),
                losses: self.losses.iter().map(|l| l[s]).collect(),
                winner: self.winners[s],
            })
            .collect()
    }
}

/// What scoring and training code needs from either model.
pub trait AnomalyModel {
    fn config(&self) -> &ModelConfig;

    fn hypotheses(&self, x: &Matrix) -> Result<BatchHypotheses>;

    /// One optimization step on a batch; returns the mean winning loss
    /// measured before the update.
    fn train_batch(&mut self, x: &Matrix) -> Result<f64>;

    /// One pass over `batches`, returning the mean of the batch losses.
    fn train_epoch(&mut self, batches: &[Matrix]) -> Result<f64> {
        if batches.is_empty() {
            return Err(Error::Usage("train_epoch called with no batches".into()));
        }
        let mut total = 0.0;
        for (i, batch) in batches.iter().enumerate() {
            let loss = self.train_batch(batch).map_err(|e| match e {
                Error::Diverged { .. } => Error::Diverged { batch: i },
                other => other,
            })?;
            total += loss;
        }
        Ok(total / batches.len() as f64)
    }

    /// Winning reconstruction for every row of `x`.
    fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.hypotheses(x)?.selected())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn check_batch(x: &Matrix, input_dim: usize) -> Result<()> {
    if x.cols() != input_dim {
        return Err(Error::shape(
            "forward_all",
            x.shape(),
            (x.rows(), input_dim),
        ));
    }
    if x.rows() == 0 {
        return Err(Error::Usage("empty training batch".into()));
    }
    Ok(())
}

/// Multiple-hypothesis autoencoder: one encoder, `K` decoders on a shared latent.
#[derive(Clone, Debug)]
pub struct MhaeModel {
    config: ModelConfig,
    encoder: LayerStack,
    decoders: Vec<LayerStack>,
}

impl MhaeModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = config.build_encoder()?;
        let decoders = (0..config.k)
            .map(|k| config.build_decoder(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            encoder,
            decoders,
        })
    }

    pub fn encoder(&self) -> &LayerStack {
        &self.encoder
    }

    pub fn decoders(&self) -> &[LayerStack] {
        &self.decoders
    }

    pub fn decoders_mut(&mut self) -> &mut [LayerStack] {
        &mut self.decoders
    }

    pub fn k(&self) -> usize {
        self.decoders.len()
    }

    pub fn forward_all(&self, x: &Matrix) -> Result<Vec<HypothesisOutput>> {
        Ok(self.hypotheses(x)?.into_samples())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            encoder: self
                .encoder
                .layers()
                .iter()
                .map(LayerRecord::from)
                .collect(),
            decoders: self
                .decoders
                .iter()
                .map(|d| d.layers().iter().map(LayerRecord::from).collect())
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    fn train_independent(&mut self, x: &Matrix, z: &Matrix, outputs: &[Matrix]) -> Result<()> {
        let mut latent_grad: Option<Matrix> = None;
        for (decoder, out) in self.decoders.iter_mut().zip(outputs) {
            let upstream = mse_grad(x, out)?;
            let grads = decoder.backward(&upstream, true)?;
            decoder.apply_gradients(&grads)?;
            let g = grads.input.expect("requested");
            match latent_grad.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => latent_grad = Some(g),
            }
        }
        let latent_grad = latent_grad
            .expect("k >= 1")
            .scale(1.0 / self.decoders.len() as f64);
        debug_assert_eq!(latent_grad.shape(), z.shape());
        let grads = self.encoder.backward(&latent_grad, false)?;
        self.encoder.apply_gradients(&grads)
    }

    fn train_wta(
        &mut self,
        x: &Matrix,
        z: &Matrix,
        outputs: &[Matrix],
        winners: &[usize],
    ) -> Result<()> {
        let mut latent_grad = Matrix::zeros(z.rows(), z.cols());
        for (k, (decoder, out)) in self.decoders.iter_mut().zip(outputs).enumerate() {
            if !winners.contains(&k) {
                continue;
            }
            let mut upstream = mse_grad(x, out)?;
            for (s, &w) in winners.iter().enumerate() {
                if w != k {
                    upstream.row_mut(s).fill(0.0);
                }
            }
            let grads = decoder.backward(&upstream, true)?;
            decoder.apply_gradients(&grads)?;
            latent_grad.add_assign(grads.input.as_ref().expect("requested"))?;
        }
        let grads = self.encoder.backward(&latent_grad, false)?;
        self.encoder.apply_gradients(&grads)
    }
}

impl AnomalyModel for MhaeModel {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn hypotheses(&self, x: &Matrix) -> Result<BatchHypotheses> {
        if x.cols() != self.config.input_dim {
            return Err(Error::shape(
                "forward_all",
                x.shape(),
                (x.rows(), self.config.input_dim),
            ));
        }
        let z = self.encoder.infer(x)?;
        let mut recons = Vec::with_capacity(self.decoders.len());
        let mut losses = Vec::with_capacity(self.decoders.len());
        for d in &self.decoders {
            let r = d.infer(&z)?;
            losses.push(per_sample_mse(x, &r)?);
            recons.push(r);
        }
        BatchHypotheses::new(z, recons, losses)
    }

    fn train_batch(&mut self, x: &Matrix) -> Result<f64> {
        check_batch(x, self.config.input_dim)?;
        let z = self.encoder.forward(x)?;
        let mut outputs = Vec::with_capacity(self.decoders.len());
        let mut losses = Vec::with_capacity(self.decoders.len());
        for d in &mut self.decoders {
            let out = d.forward(&z)?;
            losses.push(per_sample_mse(x, &out)?);
            outputs.push(out);
        }
        let hyp = BatchHypotheses::new(z, outputs, losses)?;
        let loss = mean(&hyp.min_losses());
        if !loss.is_finite() {
            return Err(Error::Diverged { batch: 0 });
        }
        match self.config.mode {
            TrainingMode::Independent => self.train_independent(x, &hyp.z, &hyp.reconstructions)?,
            TrainingMode::Wta => self.train_wta(x, &hyp.z, &hyp.reconstructions, &hyp.winners)?,
        }
        Ok(loss)
    }
}

/// Plain autoencoder: one encoder, one decoder. Initialized exactly like an
/// [`MhaeModel`] with `k = 1` and the same seed.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    config: ModelConfig,
    encoder: LayerStack,
    decoder: LayerStack,
}

impl Autoencoder {
    /// `config.k` and `config.mode` are ignored and normalized to a single
    /// independently trained decoder.
    pub fn new(mut config: ModelConfig) -> Result<Self> {
        config.k = 1;
        config.mode = TrainingMode::Independent;
        config.validate()?;
        Ok(Self {
            encoder: config.build_encoder()?,
            decoder: config.build_decoder(0)?,
            config,
        })
    }

    pub fn encoder(&self) -> &LayerStack {
        &self.encoder
    }

    pub fn decoder(&self) -> &LayerStack {
        &self.decoder
    }

    /// The equivalent one-decoder [`MhaeModel`], used for the shared model file format.
    pub fn into_mhae(self) -> MhaeModel {
        MhaeModel {
            config: self.config,
            encoder: self.encoder,
            decoders: vec![self.decoder],
        }
    }
}

impl AnomalyModel for Autoencoder {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn hypotheses(&self, x: &Matrix) -> Result<BatchHypotheses> {
        if x.cols() != self.config.input_dim {
            return Err(Error::shape(
                "forward_all",
                x.shape(),
                (x.rows(), self.config.input_dim),
            ));
        }
        let z = self.encoder.infer(x)?;
        let r = self.decoder.infer(&z)?;
        let losses = per_sample_mse(x, &r)?;
        BatchHypotheses::new(z, vec![r], vec![losses])
    }

    fn train_batch(&mut self, x: &Matrix) -> Result<f64> {
        check_batch(x, self.config.input_dim)?;
        let z = self.encoder.forward(x)?;
        let out = self.decoder.forward(&z)?;
        let loss = mean(&per_sample_mse(x, &out)?);
        if !loss.is_finite() {
            return Err(Error::Diverged { batch: 0 });
        }
        let grads = self.decoder.backward(&mse_grad(x, &out)?, true)?;
        self.decoder.apply_gradients(&grads)?;
        let enc = self
            .encoder
            .backward(grads.input.as_ref().expect("requested"), false)?;
        self.encoder.apply_gradients(&enc)?;
        Ok(loss)
    }
}

/// Epoch count and minibatch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
        }
    }
}

/// Shuffles the rows of `images` and cuts them into minibatches. The last
/// batch holds the remainder.
pub fn shuffled_batches(images: &Matrix, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Matrix> {
    let mut order: Vec<usize> = (0..images.rows()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|idx| images.select_rows(idx))
        .collect()
}

/// The shuffling RNG for a run seed. Two models trained with the same seed
/// see identical batches in identical order.
pub fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    init_rng(seed, SHUFFLE_STREAM)
}

/// Trains `model` for `train.epochs` epochs, reshuffling each epoch, and
/// returns the per-epoch mean losses.
pub fn fit<M: AnomalyModel + ?Sized>(
    model: &mut M,
    images: &Matrix,
    train: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if images.rows() == 0 {
        return Err(Error::Usage("no training samples".into()));
    }
    if train.batch_size == 0 || train.epochs == 0 {
        return Err(Error::Config(
            "epochs and batch_size must be at least 1".into(),
        ));
    }
    let mut rng = shuffle_rng(seed);
    (0..train.epochs)
        .map(|_| {
            let batches = shuffled_batches(images, train.batch_size, &mut rng);
            model.train_epoch(&batches)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    config: ModelConfig,
    encoder: Vec<LayerRecord>,
    decoders: Vec<Vec<LayerRecord>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&DenseLayer> for LayerRecord {
    fn from(l: &DenseLayer) -> Self {
        Self {
            in_dim: l.in_dim(),
            out_dim: l.out_dim(),
            activation: l.activation(),
            weights: l.weights().as_slice().to_vec(),
            bias: l.bias().as_slice().to_vec(),
        }
    }
}

impl LayerRecord {
    fn into_layer(self, field: &str, adam: AdamConfig) -> Result<DenseLayer> {
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::model_format(
                format!("{field}.weights"),
                format!(
                    "expected {}x{} = {} values, found {}",
                    self.in_dim,
                    self.out_dim,
                    self.in_dim * self.out_dim,
                    self.weights.len()
                ),
            ));
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::model_format(
                format!("{field}.bias"),
                format!(
                    "expected {} values, found {}",
                    self.out_dim,
                    self.bias.len()
                ),
            ));
        }
        let weights = Matrix::from_vec(self.in_dim, self.out_dim, self.weights)?;
        DenseLayer::from_parts(
            weights,
            Matrix::row_vector(self.bias),
            self.activation,
            adam,
        )
    }
}

impl ModelFile {
    fn into_model(self) -> Result<MhaeModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::model_format(
                "format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        let config = self.config;
        config
            .validate()
            .map_err(|e| Error::model_format("config", e.to_string()))?;
        if self.decoders.len() != config.k {
            return Err(Error::model_format(
                "decoders",
                format!(
                    "config.k is {} but {} decoders stored",
                    config.k,
                    self.decoders.len()
                ),
            ));
        }
        let stack = |records: Vec<LayerRecord>, field: String| -> Result<LayerStack> {
            let layers = records
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.into_layer(&format!("{field}[{i}]"), config.adam))
                .collect::<Result<Vec<_>>>()?;
            LayerStack::new(layers).map_err(|e| Error::model_format(field, e.to_string()))
        };
        let encoder = stack(self.encoder, "encoder".into())?;
        if encoder.in_dim() != config.input_dim || encoder.out_dim() != config.latent_dim {
            return Err(Error::model_format(
                "encoder",
                format!(
                    "maps {} -> {}, config says {} -> {}",
                    encoder.in_dim(),
                    encoder.out_dim(),
                    config.input_dim,
                    config.latent_dim
                ),
            ));
        }
        let mut decoders = Vec::with_capacity(self.decoders.len());
        for (k, records) in self.decoders.into_iter().enumerate() {
            let field = format!("decoders[{k}]");
            let d = stack(records, field.clone())?;
            if d.in_dim() != config.latent_dim || d.out_dim() != config.input_dim {
                return Err(Error::model_format(
                    field,
                    format!(
                        "maps {} -> {}, expected {} -> {}",
                        d.in_dim(),
                        d.out_dim(),
                        config.latent_dim,
                        config.input_dim
                    ),
                ));
            }
            if let Some(first) = decoders.first() {
                let shapes = |s: &LayerStack| -> Vec<(usize, usize)> {
                    s.layers().iter().map(|l| l.weights().shape()).collect()
                };
                if shapes(first) != shapes(&d) {
                    return Err(Error::model_format(
                        field,
                        "decoder shapes differ from decoders[0]",
                    ));
                }
            }
            decoders.push(d);
        }
        Ok(MhaeModel {
            config,
            encoder,
            decoders,
        })
    }
}
