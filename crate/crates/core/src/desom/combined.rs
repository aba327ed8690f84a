use serde::{Deserialize, Serialize};

use super::{initial_map, DesomModel, TrainConfig, TrainingMode, STAMP_SHAPE};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, from_f64, to_f64, Autoencoder, BatchPlan, Gradients, Scalar, Optimizer, Tensor};
use crate::som::{gaussian_kernel, Cell, DecaySchedule, SomMap};

/// Nearest prototype of every latent row; ties go to the first cell in row-major order.
pub fn batch_bmus<T: Scalar>(z: &[T], weights: &[T], m: usize, d: usize) -> Vec<Cell> {
    z.chunks_exact(d)
        .map(|row| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, w) in weights.chunks_exact(d).enumerate() {
                let dist: f64 = w
                    .iter()
                    .zip(row)
                    .map(|(&a, &b)| (to_f64(a) - to_f64(b)).powi(2))
                    .sum();
                if dist < best_d {
                    best_d = dist;
                    best = i;
                }
            }
            Cell::from_index(best, m)
        })
        .collect()
}

/// Loss terms and gradients of `L_dec + gamma * S` for one batch, where
/// `S = mean_b sum_i h(i, k_b) ||z_b - w_i||^2` with BMUs `k_b` and the
/// kernel `h` held constant.
#[derive(Clone, Debug)]
pub struct CombinedGrad<T> {
    /// `L_dec + gamma * S`, the differentiated objective.
    pub objective: f64,
    pub reconstruction: f64,
    /// Neighbourhood-weighted surrogate `S`.
    pub surrogate: f64,
    /// Mean squared distance to the BMU (the reported SOM loss).
    pub winner_distance: f64,
    pub bmus: Vec<Cell>,
    pub encoder: Gradients<T>,
    pub decoder: Gradients<T>,
    /// dS/dw (not scaled by gamma), laid out like the map weights.
    pub som: Vec<T>,
}

/// Forward and backward pass of the combined objective.
///
/// Passing `bmus` pins the winners (as finite-difference checks need);
/// otherwise they are found from the current latents.
pub fn combined_loss_and_grad<T: Scalar>(
    ae: &mut Autoencoder<T>,
    weights: &[T],
    m: usize,
    x: &Tensor<T>,
    gamma: f64,
    temperature: f64,
    bmus: Option<&[Cell]>,
) -> Result<CombinedGrad<T>> {
    let d = ae.latent_dim();
    if weights.len() != m * m * d {
        return Err(Error::shape("som weights", m * m * d, weights.len()));
    }
    if let Some(b) = bmus {
        if b.len() != x.batch() {
            return Err(Error::shape("bmu list", x.batch(), b.len()));
        }
    }
    let mut surrogate = 0.0;
    let mut winner_distance = 0.0;
    let mut som_grad = vec![T::zero(); weights.len()];
    let mut winners = Vec::new();
    let pass = ae.pass(x, |z, dz| {
        let n = z.batch();
        winners = match bmus {
            Some(b) => b.to_vec(),
            None => batch_bmus(z.data(), weights, m, d),
        };
        let scale = 2.0 / n as f64;
        for (b, &k) in winners.iter().enumerate() {
            let zb = z.sample(b);
            let mut dzb = vec![0.0; d];
            for (i, w) in weights.chunks_exact(d).enumerate() {
                let h = gaussian_kernel(Cell::from_index(i, m).grid_distance_sq(k), temperature);
                let mut dist = 0.0;
                for j in 0..d {
                    let diff = to_f64(zb[j]) - to_f64(w[j]);
                    dist += diff * diff;
                    dzb[j] += scale * h * diff;
                    som_grad[i * d + j] -= from_f64::<T>(scale * h * diff);
                }
                surrogate += h * dist / n as f64;
                if i == k.index(m) {
                    winner_distance += dist / n as f64;
                }
            }
            if gamma != 0.0 {
                for (g, v) in dz.sample_mut(b).iter_mut().zip(&dzb) {
                    *g += from_f64::<T>(gamma * v);
                }
            }
        }
        Ok(())
    })?;
    Ok(CombinedGrad {
        objective: pass.loss + gamma * surrogate,
        reconstruction: pass.loss,
        surrogate,
        winner_distance,
        bmus: winners,
        encoder: pass.encoder_grads,
        decoder: pass.decoder_grads,
        som: som_grad,
    })
}

/// Per-iteration losses of combined training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: usize,
    /// `reconstruction + gamma * som`.
    pub total: f64,
    pub reconstruction: f64,
    pub som: f64,
}

#[derive(Clone, Debug)]
pub struct CombinedFit {
    pub model: DesomModel,
    pub history: Vec<LossPoint>,
}

/// Joint training of encoder, decoder and map.
///
/// Every minibatch back-propagates `L_dec + gamma * S` through decoder and
/// encoder, then moves each prototype by `eta(t) / 2 * dS/dw`, which is the
/// batch average of the Kohonen update `eta h (z - w)`. The schedule's
/// iteration count is replaced by `epochs * batches_per_epoch`. Parameter
/// initialization and batch order match [`crate::nn::fit_autoencoder`], so
/// with `gamma = 0` the autoencoder follows the plain AE trajectory exactly.
pub fn train_combined(data: &Tensor<f32>, cfg: &TrainConfig) -> Result<CombinedFit> {
    cfg.validate()?;
    if data.shape() != STAMP_SHAPE {
        return Err(Error::shape("training data", STAMP_SHAPE, data.shape()));
    }
    if data.batch() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let mut ae = Autoencoder::<f32>::new(STAMP_SHAPE, &cfg.encoder, &cfg.decoder, cfg.ae.seed)?;
    let som = initial_map(&ae, data, cfg)?;
    let (m, d) = (som.side(), som.dim());
    let mut weights = som.weights().to_vec();
    let mut plan = BatchPlan::new(data.batch(), cfg.ae.batch_size, derive_seed(cfg.ae.seed, 3));
    let schedule = DecaySchedule {
        n_iters: (cfg.ae.epochs * plan.batches_per_epoch()).max(1),
        ..cfg.schedule
    };
    let mut opt_e = Optimizer::new(cfg.ae.optimizer);
    let mut opt_d = Optimizer::new(cfg.ae.optimizer);
    let mut history = Vec::with_capacity(schedule.n_iters);
    let mut t = 0;
    for _ in 0..cfg.ae.epochs {
        for rows in plan.next_epoch() {
            let x = data.gather(&rows);
            let g = combined_loss_and_grad(
                &mut ae,
                &weights,
                m,
                &x,
                cfg.gamma,
                schedule.temperature(t),
                None,
            )?;
            let total = g.reconstruction + cfg.gamma * g.winner_distance;
            if !total.is_finite() || !g.objective.is_finite() {
                return Err(Error::Diverged {
                    stage: "iteration",
                    index: t,
                    loss: total,
                });
            }
            opt_e.step(ae.encoder.param_slices_mut(), &g.encoder.slices());
            opt_d.step(ae.decoder.param_slices_mut(), &g.decoder.slices());
            let half_eta = 0.5 * schedule.learning_rate(t);
            for (w, &gw) in weights.iter_mut().zip(&g.som) {
                *w = (*w as f64 - half_eta * gw as f64) as f32;
            }
            history.push(LossPoint {
                iteration: t,
                total,
                reconstruction: g.reconstruction,
                som: g.winner_distance,
            });
            t += 1;
        }
    }
    let som = SomMap::new(m, d, weights)?;
    let mut config = cfg.model_config(d, TrainingMode::Combined, schedule.n_iters);
    config.som_iterations = t;
    Ok(CombinedFit {
        model: DesomModel::new(config, ae, som)?,
        history,
    })
}
