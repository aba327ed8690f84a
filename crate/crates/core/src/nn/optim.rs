use serde::{Deserialize, Serialize};

use super::{from_f64, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// `v <- momentum * v + g; p <- p - lr * v`.
    #[default]
    Sgd,
    /// Adam with bias correction; `momentum` is beta1, beta2 = 0.999, eps = 1e-8.
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    #[serde(default)]
    pub rule: UpdateRule,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            rule: UpdateRule::Sgd,
            learning_rate: 0.01,
            momentum: 0.0,
        }
    }
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer over a fixed list of parameter slots.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimConfig) -> Self {
        Optimizer {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> OptimConfig {
        self.config
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &[&[T]]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient slot count");
        let lr: T = from_f64(self.config.learning_rate);
        if self.config.rule == UpdateRule::Sgd && self.config.momentum == 0.0 {
            for (p, g) in params.into_iter().zip(grads) {
                for (p, &g) in p.iter_mut().zip(g.iter()) {
                    *p -= lr * g;
                }
            }
            return;
        }
        if self.first.len() != grads.len() {
            self.first = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            if self.config.rule == UpdateRule::Adam {
                self.second = self.first.clone();
            }
        }
        let mu: T = from_f64(self.config.momentum);
        self.steps += 1;
        match self.config.rule {
            UpdateRule::Sgd => {
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.first) {
                    for ((p, &g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *v = mu * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            UpdateRule::Adam => {
                let b1 = self.config.momentum;
                let c1: T = from_f64(1.0 / (1.0 - b1.powi(self.steps)));
                let c2: T = from_f64(1.0 / (1.0 - ADAM_BETA2.powi(self.steps)));
                let (b2, eps): (T, T) = (from_f64(ADAM_BETA2), from_f64(ADAM_EPS));
                let one = T::one();
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = mu * *m + (one - mu) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd(learning_rate: f64, momentum: f64) -> OptimConfig {
        OptimConfig {
            rule: UpdateRule::Sgd,
            learning_rate,
            momentum,
        }
    }

    #[test]
    fn plain_step_moves_against_gradient() {
        let mut opt = Optimizer::<f64>::new(sgd(0.5, 0.0));
        let mut p = vec![1.0, 2.0];
        opt.step(vec![&mut p], &[&[2.0, -4.0]]);
        assert_eq!(p, vec![0.0, 4.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = Optimizer::<f64>::new(sgd(1.0, 0.5));
        let mut p = vec![0.0];
        opt.step(vec![&mut p], &[&[1.0]]);
        opt.step(vec![&mut p], &[&[1.0]]);
        assert_eq!(p, vec![-2.5]);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut opt = Optimizer::<f64>::new(OptimConfig {
            rule: UpdateRule::Adam,
            learning_rate: 0.1,
            momentum: 0.9,
        });
        let mut p = vec![0.0, 0.0];
        opt.step(vec![&mut p], &[&[3.0, -1e-3]]);
        assert!((p[0] + 0.1).abs() < 1e-6 && (p[1] - 0.1).abs() < 1e-4, "{p:?}");
    }
}
