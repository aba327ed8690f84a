use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, OptimConfig, Optimizer, Shape, Tensor, UpdateRule};
use crate::stamps::Label;

/// Supervised score in `[0, 1]` (higher = more likely real) used only to
/// order map cells for switch-off curves.
pub trait ReferenceScorer {
    fn score(&self, latent: &[f32]) -> f64;
    /// Short description of what produced the scores.
    fn provenance(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub iterations: usize,
    /// Gradient-descent step of the logistic scorer.
    pub learning_rate: f64,
    pub l2: f64,
    /// Fraction of the labeled rows held out for the accuracy estimate.
    pub holdout: f64,
    /// Hidden units of the MLP scorer; 0 selects logistic regression.
    pub hidden: usize,
    /// Adam step of the MLP scorer.
    pub mlp_learning_rate: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-4,
            holdout: 0.2,
            hidden: 0,
            mlp_learning_rate: 0.01,
        }
    }
}

/// Logistic regression on standardized latent vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticScorer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Accuracy at threshold 0.5 on the held-out rows.
    pub holdout_accuracy: f64,
    pub seed: u64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn standardize(z: &[f32], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    z.iter().enumerate().map(|(k, &v)| (v as f64 - mean[k]) / scale[k]).collect()
}

impl LogisticScorer {
    fn logit(&self, z: &[f32]) -> f64 {
        let x = standardize(z, &self.mean, &self.scale);
        self.bias + x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>()
    }
}

impl ReferenceScorer for LogisticScorer {
    fn score(&self, latent: &[f32]) -> f64 {
        sigmoid(self.logit(latent))
    }

    fn provenance(&self) -> String {
        format!(
            "logistic regression on {}-d encoder latents, seed {}, held-out accuracy {:.4}",
            self.weights.len(),
            self.seed,
            self.holdout_accuracy
        )
    }
}

/// One-hidden-layer ReLU network with a sigmoid output, on standardized latents.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpScorer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub network: Network<f64>,
    pub holdout_accuracy: f64,
    pub seed: u64,
}

impl ReferenceScorer for MlpScorer {
    fn score(&self, latent: &[f32]) -> f64 {
        let x = standardize(latent, &self.mean, &self.scale);
        let x = Tensor::from_vec(1, Shape::flat(x.len()), x).expect("latent width matches");
        sigmoid(self.network.predict(&x).expect("input shape matches").data()[0])
    }

    fn provenance(&self) -> String {
        let hidden = self.network.shapes()[0].len();
        format!(
            "MLP ({hidden} hidden units) on {}-d encoder latents, seed {}, held-out accuracy {:.4}",
            self.mean.len(),
            self.seed,
            self.holdout_accuracy
        )
    }
}

/// Either scorer, as chosen by [`ScorerConfig::hidden`].
#[derive(Clone, Debug, PartialEq)]
pub enum Scorer {
    Logistic(LogisticScorer),
    Mlp(MlpScorer),
}

impl Scorer {
    pub fn holdout_accuracy(&self) -> f64 {
        match self {
            Scorer::Logistic(s) => s.holdout_accuracy,
            Scorer::Mlp(s) => s.holdout_accuracy,
        }
    }
}

impl ReferenceScorer for Scorer {
    fn score(&self, latent: &[f32]) -> f64 {
        match self {
            Scorer::Logistic(s) => s.score(latent),
            Scorer::Mlp(s) => s.score(latent),
        }
    }

    fn provenance(&self) -> String {
        match self {
            Scorer::Logistic(s) => s.provenance(),
            Scorer::Mlp(s) => s.provenance(),
        }
    }
}

/// Labeled rows split into seeded train and held-out parts, with the
/// standardization fitted on the train part.
struct Prepared {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Standardized train rows and their 0/1 targets.
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    /// Held-out (row index, target); the train rows when nothing is held out.
    eval: Vec<(usize, f64)>,
}

fn prepare(latents: &[f32], d: usize, labels: &[Label], seed: u64, cfg: &ScorerConfig) -> Result<Prepared> {
    if d == 0 || latents.len() != labels.len() * d {
        return Err(Error::shape("latent rows", labels.len() * d, latents.len()));
    }
    let mut rows: Vec<(usize, f64)> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            Label::Real => Some((i, 1.0)),
            Label::Bogus => Some((i, 0.0)),
            Label::Unlabeled => None,
        })
        .collect();
    let n_real = rows.iter().filter(|r| r.1 == 1.0).count();
    if n_real == 0 || n_real == rows.len() {
        return Err(Error::invalid(format!(
            "scorer needs both classes: {n_real} real of {} labeled",
            rows.len()
        )));
    }
    if !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::Config(format!("holdout fraction {} outside [0, 1)", cfg.holdout)));
    }
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (rows.len() as f64 * cfg.holdout).round() as usize;
    let (test, train) = rows.split_at(n_test);
    let row = |i: usize| &latents[i * d..(i + 1) * d];

    let mut mean = vec![0.0; d];
    for &(i, _) in train {
        for (k, &v) in row(i).iter().enumerate() {
            mean[k] += v as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= train.len() as f64);
    let mut scale = vec![0.0; d];
    for &(i, _) in train {
        for (k, &v) in row(i).iter().enumerate() {
            scale[k] += (v as f64 - mean[k]).powi(2);
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / train.len() as f64).sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    let x = train.iter().map(|&(i, _)| standardize(row(i), &mean, &scale)).collect();
    let y = train.iter().map(|&(_, t)| t).collect();
    let eval = if test.is_empty() { train.to_vec() } else { test.to_vec() };
    Ok(Prepared { mean, scale, x, y, eval })
}

fn accuracy(s: &impl ReferenceScorer, latents: &[f32], d: usize, eval: &[(usize, f64)]) -> f64 {
    let correct = eval
        .iter()
        .filter(|&&(i, y)| (s.score(&latents[i * d..(i + 1) * d]) >= 0.5) == (y == 1.0))
        .count();
    correct as f64 / eval.len() as f64
}

/// Fits a [`LogisticScorer`] by full-batch gradient descent on a seeded
/// training split of the labeled rows; unlabeled rows are ignored.
pub fn train_reference_scorer(
    latents: &[f32],
    d: usize,
    labels: &[Label],
    seed: u64,
    cfg: &ScorerConfig,
) -> Result<LogisticScorer> {
    let Prepared { mean, scale, x, y, eval } = prepare(latents, d, labels, seed, cfg)?;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let n = x.len() as f64;
    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (xi, &t) in x.iter().zip(&y) {
            let p = sigmoid(b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
            let e = p - t;
            for (g, &v) in gw.iter_mut().zip(xi) {
                *g += e * v;
            }
            gb += e;
        }
        for (wk, gk) in w.iter_mut().zip(&gw) {
            *wk -= cfg.learning_rate * (gk / n + cfg.l2 * *wk);
        }
        b -= cfg.learning_rate * gb / n;
    }

    let mut scorer = LogisticScorer {
        mean,
        scale,
        weights: w,
        bias: b,
        holdout_accuracy: 0.0,
        seed,
    };
    scorer.holdout_accuracy = accuracy(&scorer, latents, d, &eval);
    Ok(scorer)
}

/// Fits an [`MlpScorer`] with `cfg.hidden` hidden units by full-batch Adam
/// on the cross-entropy loss, same split as [`train_reference_scorer`].
pub fn train_mlp_scorer(
    latents: &[f32],
    d: usize,
    labels: &[Label],
    seed: u64,
    cfg: &ScorerConfig,
) -> Result<MlpScorer> {
    if cfg.hidden == 0 {
        return Err(Error::Config("MLP scorer needs at least one hidden unit".into()));
    }
    let Prepared { mean, scale, x, y, eval } = prepare(latents, d, labels, seed, cfg)?;
    let specs = [LayerSpec::Dense { units: cfg.hidden }, LayerSpec::Relu, LayerSpec::Dense { units: 1 }];
    let mut net = Network::<f64>::new(Shape::flat(d), &specs, seed)?;
    let n = x.len();
    let input = Tensor::from_vec(n, Shape::flat(d), x.concat())?;
    let mut opt = Optimizer::new(OptimConfig {
        rule: UpdateRule::Adam,
        learning_rate: cfg.mlp_learning_rate,
        momentum: 0.9,
    });
    for step in 0..cfg.iterations {
        let out = net.forward(&input)?;
        let g: Vec<f64> = out.data().iter().zip(&y).map(|(&z, &t)| (sigmoid(z) - t) / n as f64).collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                stage: "scorer step",
                index: step,
                loss: f64::NAN,
            });
        }
        let mut grads = net.backward(&Tensor::from_vec(n, Shape::flat(1), g)?)?;
        for (k, lg) in grads.layers.iter_mut().enumerate() {
            if let Some((w, _)) = net.layer_params(k) {
                for (gk, &wk) in lg.weights.iter_mut().zip(w) {
                    *gk += cfg.l2 * wk;
                }
            }
        }
        opt.step(net.param_slices_mut(), &grads.slices());
    }
    let mut scorer = MlpScorer {
        mean,
        scale,
        network: net,
        holdout_accuracy: 0.0,
        seed,
    };
    scorer.holdout_accuracy = accuracy(&scorer, latents, d, &eval);
    Ok(scorer)
}

/// Logistic scorer when `cfg.hidden == 0`, MLP scorer otherwise.
pub fn fit_scorer(latents: &[f32], d: usize, labels: &[Label], seed: u64, cfg: &ScorerConfig) -> Result<Scorer> {
    if cfg.hidden == 0 {
        train_reference_scorer(latents, d, labels, seed, cfg).map(Scorer::Logistic)
    } else {
        train_mlp_scorer(latents, d, labels, seed, cfg).map(Scorer::Mlp)
    }
}
