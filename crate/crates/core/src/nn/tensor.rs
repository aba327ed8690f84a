use serde::{Deserialize, Serialize};
use std::fmt;

use super::{from_f64, to_f64, Scalar};
use crate::error::{Error, Result};

/// Per-sample activation shape (channels, rows, columns). Vectors are `(n, 1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn flat(len: usize) -> Self {
        Shape::new(len, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A batch of equally shaped samples stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    batch: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(batch: usize, shape: Shape) -> Self {
        Tensor {
            shape,
            batch,
            data: vec![T::zero(); batch * shape.len()],
        }
    }

    pub fn from_vec(batch: usize, shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * shape.len() {
            return Err(Error::shape(
                "tensor data",
                format!("{} values ({batch} x {shape})", batch * shape.len()),
                data.len(),
            ));
        }
        Ok(Tensor { shape, batch, data })
    }

    /// Copies the given rows of `self` into a new tensor, in order.
    pub fn gather(&self, rows: &[usize]) -> Self {
        let len = self.shape.len();
        let mut data = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            data.extend_from_slice(self.sample(r));
        }
        Tensor {
            shape: self.shape,
            batch: rows.len(),
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.shape.len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.shape.len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn samples(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.shape.len().max(1))
    }

    /// Reinterprets the per-sample shape without moving data.
    pub fn reshaped(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(Error::shape("reshape", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            batch: self.batch,
            data: self.data.iter().map(|&v| from_f64(to_f64(v))).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Inputs paired with regression targets (the inputs themselves when autoencoding).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Tensor<T>, targets: Tensor<T>) -> Result<Self> {
        if inputs.batch() == 0 {
            return Err(Error::invalid("batch must contain at least one sample"));
        }
        if inputs.batch() != targets.batch() {
            return Err(Error::shape("batch targets", inputs.batch(), targets.batch()));
        }
        if !inputs.all_finite() || !targets.all_finite() {
            return Err(Error::invalid("batch contains non-finite values"));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn autoencoding(inputs: Tensor<T>) -> Result<Self> {
        let targets = inputs.clone();
        Batch::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
