use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, from_f64, to_f64, Gradients, LayerSpec, Network, Scalar, Optimizer, OptimConfig, Shape, Tensor};
use crate::error::{Error, Result};

/// Mean squared error over every element of the batch, and its gradient.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape().len() != target.shape().len() || pred.batch() != target.batch() {
        return Err(Error::shape(
            "mse target",
            format!("{} x {}", pred.batch(), pred.shape()),
            format!("{} x {}", target.batch(), target.shape()),
        ));
    }
    let n = pred.data().len();
    let scale: T = from_f64(2.0 / n as f64);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.batch(), pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let diff = p - t;
        loss += to_f64(diff) * to_f64(diff);
        *g = scale * diff;
    }
    Ok((loss / n as f64, grad))
}

/// Autoencoder training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            epochs: 10,
            batch_size: 64,
            optimizer: OptimConfig::default(),
            seed: 0,
        }
    }
}

/// Seeded per-epoch shuffling of sample indices into minibatches.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    rng: ChaCha8Rng,
    n: usize,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        BatchPlan {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            batch_size: batch_size.max(1),
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// Next epoch's minibatches; the last may be short.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Encoder/decoder pair; the decoder maps latents back to the input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<T> {
    pub encoder: Network<T>,
    pub decoder: Network<T>,
}

/// Everything computed by one reconstruction forward/backward pass.
pub(crate) struct Pass<T> {
    pub loss: f64,
    pub encoder_grads: Gradients<T>,
    pub decoder_grads: Gradients<T>,
}

impl<T: Scalar> Autoencoder<T> {
    /// Encoder seed stream 1, decoder seed stream 2 of `seed`.
    pub fn new(input: Shape, encoder: &[LayerSpec], decoder: &[LayerSpec], seed: u64) -> Result<Self> {
        let encoder = Network::new(input, encoder, derive_seed(seed, 1))?;
        let latent = encoder.output_shape();
        let decoder = Network::new(latent, decoder, derive_seed(seed, 2))?;
        Self::from_parts(encoder, decoder)
    }

    pub fn from_parts(encoder: Network<T>, decoder: Network<T>) -> Result<Self> {
        if decoder.input_shape() != encoder.output_shape() {
            return Err(Error::shape(
                "decoder input",
                encoder.output_shape(),
                decoder.input_shape(),
            ));
        }
        if decoder.output_shape() != encoder.input_shape() {
            return Err(Error::shape(
                "decoder output",
                encoder.input_shape(),
                decoder.output_shape(),
            ));
        }
        Ok(Autoencoder { encoder, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_shape().len()
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.encoder.predict(x)
    }

    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.predict(&self.encoder.predict(x)?)
    }

    /// Forward through both halves and backward, letting `latent_hook` add
    /// extra terms to dL/dz before the encoder backward pass.
    pub(crate) fn pass<F>(&mut self, x: &Tensor<T>, latent_hook: F) -> Result<Pass<T>>
    where
        F: FnOnce(&Tensor<T>, &mut Tensor<T>) -> Result<()>,
    {
        let z = self.encoder.forward(x)?;
        let xhat = self.decoder.forward(&z)?;
        let (loss, grad) = mse(&xhat, x)?;
        let decoder_grads = self.decoder.backward(&grad)?;
        let mut dz = decoder_grads.input.clone();
        latent_hook(&z, &mut dz)?;
        let encoder_grads = self.encoder.backward(&dz)?;
        Ok(Pass {
            loss,
            encoder_grads,
            decoder_grads,
        })
    }
}

/// Trained autoencoder plus mean reconstruction loss for every epoch.
#[derive(Clone, Debug)]
pub struct AeFit<T> {
    pub autoencoder: Autoencoder<T>,
    pub history: Vec<f64>,
}

/// Trains an autoencoder on `data` (one sample per row) with minibatch SGD.
///
/// Shuffling uses seed stream 3 of `config.seed`, so equal seeds and data
/// give bit-identical parameters.
pub fn fit_autoencoder<T: Scalar>(
    encoder: &[LayerSpec],
    decoder: &[LayerSpec],
    data: &Tensor<T>,
    config: &AeConfig,
) -> Result<AeFit<T>> {
    if data.batch() == 0 {
        return Err(Error::invalid("autoencoder training set is empty"));
    }
    let mut ae = Autoencoder::new(data.shape(), encoder, decoder, config.seed)?;
    let mut plan = BatchPlan::new(data.batch(), config.batch_size, derive_seed(config.seed, 3));
    let mut opt_e = Optimizer::new(config.optimizer);
    let mut opt_d = Optimizer::new(config.optimizer);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for rows in plan.next_epoch() {
            let x = data.gather(&rows);
            let pass = ae.pass(&x, |_, _| Ok(()))?;
            if !pass.loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "epoch",
                    index: epoch,
                    loss: pass.loss,
                });
            }
            total += pass.loss * rows.len() as f64;
            opt_e.step(ae.encoder.param_slices_mut(), &pass.encoder_grads.slices());
            opt_d.step(ae.decoder.param_slices_mut(), &pass.decoder_grads.slices());
        }
        let mean = total / data.batch() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                stage: "epoch",
                index: epoch,
                loss: mean,
            });
        }
        history.push(mean);
    }
    Ok(AeFit {
        autoencoder: ae,
        history,
    })
}
