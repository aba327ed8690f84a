use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::layer::Layer;
use super::{from_f64, to_f64, LayerSpec, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Gradient arrays for one layer, shaped like its weights and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Output of [`Network::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    /// One entry per layer, in declaration order (empty for parameter-free layers).
    pub layers: Vec<ParamGrad<T>>,
    /// Gradient of the loss with respect to the network input.
    pub input: Tensor<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Parameter gradients flattened in declaration order (weights, then bias, per layer).
    pub fn flat(&self) -> Vec<T> {
        self.slices().into_iter().flatten().copied().collect()
    }

    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
            .collect()
    }
}

/// A layered feed-forward network with cached activations for backprop.
#[derive(Clone, Debug)]
pub struct Network<T> {
    input: Shape,
    layers: Vec<Layer<T>>,
    seed: u64,
    trace: Option<Vec<Tensor<T>>>,
}

impl<T: PartialEq> PartialEq for Network<T> {
    /// Structural and parameter equality; cached activations are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.input == other.input && self.seed == other.seed && self.layers == other.layers
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a network and initializes weights uniformly in
    /// `±sqrt(6 / (fan_in + fan_out))` from `seed`; biases start at zero.
    pub fn new(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        for (k, spec) in specs.iter().enumerate() {
            let output = spec
                .output_shape(shape)
                .map_err(|e| Error::Config(format!("layer {k}: {e}")))?;
            let (n_w, n_b, fan_in, fan_out) = spec.param_layout(shape);
            let weights = if n_w > 0 {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n_w)
                    .map(|_| from_f64(rng.random_range(-limit..limit)))
                    .collect()
            } else {
                Vec::new()
            };
            layers.push(Layer {
                spec: spec.clone(),
                input: shape,
                output,
                weights,
                bias: vec![T::zero(); n_b],
            });
            shape = output;
        }
        Ok(Network {
            input,
            layers,
            seed,
            trace: None,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    /// Per-layer output shapes in order.
    pub fn shapes(&self) -> Vec<Shape> {
        self.layers.iter().map(|l| l.output).collect()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameter slices in declaration order: each layer's weights, then its bias.
    pub fn param_slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.param_slices().into_iter().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::shape("parameter vector", self.num_params(), values.len()));
        }
        let mut rest = values;
        for slot in self.param_slices_mut() {
            let (head, tail) = rest.split_at(slot.len());
            slot.copy_from_slice(head);
            rest = tail;
        }
        self.trace = None;
        Ok(())
    }

    /// Raw weights and bias of layer `k`.
    pub fn layer_params(&self, k: usize) -> Option<(&[T], &[T])> {
        self.layers
            .get(k)
            .map(|l| (l.weights.as_slice(), l.bias.as_slice()))
    }

    pub fn layer_params_mut(&mut self, k: usize) -> Option<(&mut [T], &mut [T])> {
        self.trace = None;
        self.layers
            .get_mut(k)
            .map(|l| (l.weights.as_mut_slice(), l.bias.as_mut_slice()))
    }

    /// SHA-256 over the little-endian bytes of every parameter (as f64).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.param_slices().into_iter().flatten() {
            h.update(to_f64(*v).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Converts parameters to another scalar type (e.g. `f32` to `f64` for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input: self.input,
            seed: self.seed,
            trace: None,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    input: l.input,
                    output: l.output,
                    weights: l.weights.iter().map(|&v| from_f64(to_f64(v))).collect(),
                    bias: l.bias.iter().map(|&v| from_f64(to_f64(v))).collect(),
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.input {
            return Err(Error::shape("network input", self.input, x.shape()));
        }
        if x.batch() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        Ok(())
    }

    fn apply_layer(layer: &Layer<T>, x: &Tensor<T>) -> Tensor<T> {
        let mut out = Tensor::zeros(x.batch(), layer.output);
        layer.forward_batch(x.data(), x.batch(), out.data_mut());
        out
    }

    /// Inference without caching; safe on a shared network.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = Self::apply_layer(layer, &act);
        }
        Ok(act)
    }

    /// Forward pass that caches every intermediate activation for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.clone());
        for layer in &self.layers {
            let next = Self::apply_layer(layer, trace.last().expect("non-empty trace"));
            trace.push(next);
        }
        let out = trace.last().expect("non-empty trace").clone();
        self.trace = Some(trace);
        Ok(out)
    }

    /// Backpropagates `loss_grad` (dL/d output) through the cached forward pass.
    ///
    /// Consumes the cache: a second call without a new forward is a protocol error.
    pub fn backward(&mut self, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        let trace = self.trace.take().ok_or_else(|| {
            Error::Protocol("backward called without a cached forward pass".into())
        })?;
        let out = trace.last().expect("non-empty trace");
        if loss_grad.shape() != out.shape() || loss_grad.batch() != out.batch() {
            return Err(Error::shape(
                "loss gradient",
                format!("{} x {}", out.batch(), out.shape()),
                format!("{} x {}", loss_grad.batch(), loss_grad.shape()),
            ));
        }
        let mut grads: Vec<ParamGrad<T>> = self
            .layers
            .iter()
            .map(|l| ParamGrad {
                weights: vec![T::zero(); l.weights.len()],
                bias: vec![T::zero(); l.bias.len()],
            })
            .collect();
        let mut g = loss_grad.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace[k];
            let mut dx = Tensor::zeros(x.batch(), layer.input);
            let pg = &mut grads[k];
            layer.backward_batch(
                x.data(),
                g.data(),
                x.batch(),
                &mut pg.weights,
                &mut pg.bias,
                dx.data_mut(),
            );
            g = dx;
        }
        Ok(Gradients {
            layers: grads,
            input: g,
        })
    }

    pub(crate) fn layer_kind(&self, k: usize) -> String {
        self.layers
            .get(k)
            .map_or_else(|| "?".into(), |l| l.spec.to_string())
    }

    /// Maps a flat parameter index to its layer index.
    pub(crate) fn layer_of_param(&self, mut index: usize) -> usize {
        for (k, l) in self.layers.iter().enumerate() {
            let n = l.weights.len() + l.bias.len();
            if index < n {
                return k;
            }
            index -= n;
        }
        self.layers.len()
    }
}
