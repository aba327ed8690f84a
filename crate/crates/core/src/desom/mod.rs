//! Autoencoder + self-organizing map composition.
//!
//! A [`DesomModel`] encodes a stamp to a latent vector and assigns it to the
//! nearest prototype of an `m x m` map. Training is either separate (AE
//! first, then the SOM on frozen latents) or combined (one joint loss).

mod combined;
mod io;
mod presets;

pub use combined::{batch_bmus, combined_loss_and_grad, train_combined, CombinedFit, CombinedGrad, LossPoint};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use presets::{preset, PRESET_NAMES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    derive_seed, fit_autoencoder, mse, AeConfig, Autoencoder, LayerSpec, Shape, Tensor,
};
use crate::som::{fit_som, Cell, DecaySchedule, QePoint, SomInit, SomMap, SomTrainConfig};
use crate::stamps::{check_normalized, Stamp, STAMP_SIDE};

/// Input shape of every model: one 32x32 channel.
pub const STAMP_SHAPE: Shape = Shape {
    channels: 1,
    height: STAMP_SIDE,
    width: STAMP_SIDE,
};

/// Rows encoded per forward pass when mapping whole datasets.
const ENCODE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    /// Autoencoder trained, SOM only initialized.
    Ae,
    Separate,
    Combined,
}

/// Everything needed to rebuild a model's architecture, plus provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub m: usize,
    pub d: usize,
    pub gamma: f64,
    pub ae_seed: u64,
    pub som_seed: u64,
    pub mode: TrainingMode,
    pub ae_epochs: usize,
    pub som_iterations: usize,
}

/// Full training recipe; presets are in [`preset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub m: usize,
    pub ae: AeConfig,
    pub schedule: DecaySchedule,
    pub som: SomTrainConfig,
    #[serde(default)]
    pub som_init: SomInit,
    /// Weight of the SOM loss in combined training.
    pub gamma: f64,
    /// Latents drawn (by index, seeded) to initialize the map.
    pub init_samples: usize,
}

impl TrainConfig {
    /// Sets the autoencoder seed to `seed` and the SOM seed to a derived stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ae.seed = seed;
        self.som.seed = derive_seed(seed, 10);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("map side must be positive".into()));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.ae.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.init_samples == 0 {
            return Err(Error::Config("init_samples must be positive".into()));
        }
        self.schedule.validate()
    }

    fn model_config(&self, d: usize, mode: TrainingMode, som_iterations: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            m: self.m,
            d,
            gamma: self.gamma,
            ae_seed: self.ae.seed,
            som_seed: self.som.seed,
            mode,
            ae_epochs: self.ae.epochs,
            som_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesomModel {
    pub config: ModelConfig,
    pub autoencoder: Autoencoder<f32>,
    pub som: SomMap,
}

/// `L_tot = L_dec + gamma * L_som` on one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub som: f64,
}

impl DesomModel {
    /// Checks that the encoder, decoder and map dimensions agree.
    pub fn new(config: ModelConfig, autoencoder: Autoencoder<f32>, som: SomMap) -> Result<Self> {
        if autoencoder.encoder.input_shape() != STAMP_SHAPE {
            return Err(Error::shape("encoder input", STAMP_SHAPE, autoencoder.encoder.input_shape()));
        }
        let d = autoencoder.latent_dim();
        if d != config.d || som.dim() != d {
            return Err(Error::shape(
                "latent dimension",
                format!("config {} / map {}", config.d, som.dim()),
                d,
            ));
        }
        if som.side() != config.m {
            return Err(Error::shape("map side", config.m, som.side()));
        }
        Ok(DesomModel {
            config,
            autoencoder,
            som,
        })
    }

    pub fn m(&self) -> usize {
        self.som.side()
    }

    pub fn d(&self) -> usize {
        self.som.dim()
    }

    /// Latent vectors of every row of `data`, row-major.
    pub fn encode(&self, data: &Tensor<f32>) -> Result<Vec<f32>> {
        encode_all(&self.autoencoder, data)
    }

    /// Reconstruction, SOM quantization and total loss on `batch`.
    pub fn total_loss(&self, batch: &Tensor<f32>) -> Result<LossBreakdown> {
        if batch.shape() != STAMP_SHAPE {
            return Err(Error::shape("loss batch", STAMP_SHAPE, batch.shape()));
        }
        let z = self.encode(batch)?;
        let latents = Tensor::from_vec(batch.batch(), Shape::flat(self.d()), z)?;
        let recon = self.autoencoder.decoder.predict(&latents)?;
        let (reconstruction, _) = mse(&recon, batch)?;
        let som = self.som.quantization_error(latents.data())?;
        Ok(LossBreakdown {
            total: reconstruction + self.config.gamma * som,
            reconstruction,
            som,
        })
    }

    /// Map cell of one normalized stamp.
    pub fn assign_cell(&self, pixels: &[f32]) -> Result<Cell> {
        check_normalized(pixels)?;
        let x = Tensor::from_vec(1, STAMP_SHAPE, pixels.to_vec())?;
        let z = self.autoencoder.encode(&x)?;
        Ok(self.som.best_matching_unit(z.data())?.cell)
    }

    /// Map cells of every row of `data` (rows must be normalized stamps).
    pub fn assign_cells(&self, data: &Tensor<f32>) -> Result<Vec<Cell>> {
        if data.shape() != STAMP_SHAPE {
            return Err(Error::shape("stamp batch", STAMP_SHAPE, data.shape()));
        }
        for row in data.samples() {
            check_normalized(row)?;
        }
        self.som.assign(&self.encode(data)?)
    }

    /// Decoded prototype of every cell, row-major, clipped to `[0, 1]`.
    pub fn decode_prototypes(&self) -> Result<Tensor<f32>> {
        let n = self.som.n_cells();
        let w = Tensor::from_vec(n, Shape::flat(self.d()), self.som.weights().to_vec())?;
        let mut out = self.autoencoder.decoder.predict(&w)?;
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(out)
    }
}

/// Stacks stamp pixels into a `n x 1 x 32 x 32` tensor.
pub fn stamps_tensor(stamps: &[Stamp]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(stamps.len() * STAMP_SHAPE.len());
    for s in stamps {
        data.extend_from_slice(s.pixels());
    }
    Tensor::from_vec(stamps.len(), STAMP_SHAPE, data)
}

/// Encodes `data` in fixed-size chunks to bound activation memory.
pub fn encode_all(ae: &Autoencoder<f32>, data: &Tensor<f32>) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(data.batch() * ae.latent_dim());
    let rows: Vec<usize> = (0..data.batch()).collect();
    for chunk in rows.chunks(ENCODE_CHUNK) {
        out.extend_from_slice(ae.encode(&data.gather(chunk))?.data());
    }
    Ok(out)
}

/// Encodes a seeded subset of `data` and builds the initial map from it.
fn initial_map(ae: &Autoencoder<f32>, data: &Tensor<f32>, cfg: &TrainConfig) -> Result<SomMap> {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    let n = data.batch();
    let k = cfg.init_samples.min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.som.seed, 1));
    let mut rows = sample(&mut rng, n, k).into_vec();
    rows.sort_unstable();
    let z = ae.encode(&data.gather(&rows))?;
    SomMap::initialize(cfg.m, ae.latent_dim(), z.data(), cfg.som_init, derive_seed(cfg.som.seed, 2))
}

/// Autoencoder stage alone: trained AE and an initialized, untrained map.
pub fn train_autoencoder_stage(data: &Tensor<f32>, cfg: &TrainConfig) -> Result<(DesomModel, Vec<f64>)> {
    cfg.validate()?;
    if data.shape() != STAMP_SHAPE {
        return Err(Error::shape("training data", STAMP_SHAPE, data.shape()));
    }
    let fit = fit_autoencoder(&cfg.encoder, &cfg.decoder, data, &cfg.ae).map_err(Error::in_stage("autoencoder"))?;
    let ae = fit.autoencoder;
    let som = initial_map(&ae, data, cfg).map_err(Error::in_stage("som-init"))?;
    let config = cfg.model_config(ae.latent_dim(), TrainingMode::Ae, 0);
    Ok((DesomModel::new(config, ae, som)?, fit.history))
}

/// SOM stage on frozen latents, encoded once. Leaves the autoencoder untouched.
pub fn train_som_stage(model: &mut DesomModel, data: &Tensor<f32>, cfg: &TrainConfig) -> Result<Vec<QePoint>> {
    cfg.schedule.validate()?;
    let latents = model.encode(data).map_err(Error::in_stage("encode"))?;
    let history = fit_som(&mut model.som, &latents, &cfg.schedule, &cfg.som).map_err(Error::in_stage("som"))?;
    model.config.mode = TrainingMode::Separate;
    model.config.som_seed = cfg.som.seed;
    model.config.som_iterations = cfg.schedule.n_iters;
    Ok(history)
}

/// Result of [`train_separate`].
#[derive(Clone, Debug)]
pub struct SeparateFit {
    pub model: DesomModel,
    /// Mean reconstruction loss per epoch.
    pub ae_history: Vec<f64>,
    /// Quantization error on the training latents; the first point is the untrained map.
    pub qe_history: Vec<QePoint>,
    /// Autoencoder parameter checksum after the AE stage and after the SOM stage.
    pub checksum_after_ae: String,
    pub checksum_after_som: String,
}

/// Trains the autoencoder, freezes it, then trains the SOM on its latents.
pub fn train_separate(data: &Tensor<f32>, cfg: &TrainConfig) -> Result<SeparateFit> {
    let (mut model, ae_history) = train_autoencoder_stage(data, cfg)?;
    let checksum_after_ae = ae_checksum(&model.autoencoder);
    let qe_history = train_som_stage(&mut model, data, cfg)?;
    let checksum_after_som = ae_checksum(&model.autoencoder);
    if checksum_after_ae != checksum_after_som {
        return Err(Error::Protocol("autoencoder parameters changed during the SOM stage".into()));
    }
    Ok(SeparateFit {
        model,
        ae_history,
        qe_history,
        checksum_after_ae,
        checksum_after_som,
    })
}

/// Checksum over encoder and decoder parameters.
pub fn ae_checksum(ae: &Autoencoder<f32>) -> String {
    format!("{}:{}", ae.encoder.checksum(), ae.decoder.checksum())
}
