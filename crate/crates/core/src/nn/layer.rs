use serde::{Deserialize, Serialize};
use std::fmt;

use super::gemm::{gemm, View};
use super::{Scalar, Shape};
use crate::error::{Error, Result};

/// Declarative description of one layer. Shapes are inferred by chaining.
///
/// Convolutions use "same"-style padding of `(kernel - 1) / 2`, so an odd
/// kernel with stride 1 preserves the spatial extent. `transposed-conv2d`
/// is nearest-neighbour upsampling by `stride` followed by a stride-1
/// convolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Maxpool2d {
        size: usize,
        /// Defaults to `size` (non-overlapping windows).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
    },
    Upsample2d {
        factor: usize,
    },
    TransposedConv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Relu,
    Flatten,
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
}

fn one() -> usize {
    1
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
            } => write!(f, "conv2d({filters}, k{kernel}, s{stride})"),
            LayerSpec::Maxpool2d { size, stride } => {
                write!(f, "maxpool2d({size}, s{})", stride.unwrap_or(*size))
            }
            LayerSpec::Upsample2d { factor } => write!(f, "upsample2d(x{factor})"),
            LayerSpec::TransposedConv2d {
                filters,
                kernel,
                stride,
            } => write!(f, "transposed-conv2d({filters}, k{kernel}, s{stride})"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Reshape {
                channels,
                height,
                width,
            } => write!(f, "reshape({channels}x{height}x{width})"),
        }
    }
}

pub(crate) fn conv_out(len: usize, kernel: usize, stride: usize) -> usize {
    let pad = (kernel - 1) / 2;
    (len + 2 * pad - kernel) / stride + 1
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::TransposedConv2d { .. }
        )
    }

    /// Output shape for a given input shape, validating the layer against it.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{self}: {name} must be positive")))
            } else {
                Ok(())
            }
        };
        if input.is_empty() {
            return Err(Error::Config(format!("{self}: empty input shape")));
        }
        match *self {
            LayerSpec::Dense { units } => {
                positive("units", units)?;
                Ok(Shape::flat(units))
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
            } => {
                positive("filters", filters)?;
                positive("kernel", kernel)?;
                positive("stride", stride)?;
                self.check_kernel(kernel, input.height, input.width)?;
                Ok(Shape::new(
                    filters,
                    conv_out(input.height, kernel, stride),
                    conv_out(input.width, kernel, stride),
                ))
            }
            LayerSpec::Maxpool2d { size, stride } => {
                positive("size", size)?;
                let stride = stride.unwrap_or(size);
                positive("stride", stride)?;
                self.check_kernel(size, input.height, input.width)?;
                Ok(Shape::new(
                    input.channels,
                    (input.height - size) / stride + 1,
                    (input.width - size) / stride + 1,
                ))
            }
            LayerSpec::Upsample2d { factor } => {
                positive("factor", factor)?;
                Ok(Shape::new(
                    input.channels,
                    input.height * factor,
                    input.width * factor,
                ))
            }
            LayerSpec::TransposedConv2d {
                filters,
                kernel,
                stride,
            } => {
                positive("filters", filters)?;
                positive("kernel", kernel)?;
                positive("stride", stride)?;
                let (h, w) = (input.height * stride, input.width * stride);
                self.check_kernel(kernel, h, w)?;
                Ok(Shape::new(filters, conv_out(h, kernel, 1), conv_out(w, kernel, 1)))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::Flatten => Ok(Shape::flat(input.len())),
            LayerSpec::Reshape {
                channels,
                height,
                width,
            } => {
                let target = Shape::new(channels, height, width);
                if target.len() != input.len() {
                    return Err(Error::Config(format!(
                        "{self}: cannot reshape {input} ({} values)",
                        input.len()
                    )));
                }
                Ok(target)
            }
        }
    }

    fn check_kernel(&self, kernel: usize, height: usize, width: usize) -> Result<()> {
        if kernel > height || kernel > width {
            return Err(Error::Config(format!(
                "{self}: kernel {kernel} exceeds input extent {height}x{width}"
            )));
        }
        Ok(())
    }

    /// (weight count, bias count, fan in, fan out) for a given input shape.
    pub(crate) fn param_layout(&self, input: Shape) -> (usize, usize, usize, usize) {
        match *self {
            LayerSpec::Dense { units } => (units * input.len(), units, input.len(), units),
            LayerSpec::Conv2d {
                filters, kernel, ..
            }
            | LayerSpec::TransposedConv2d {
                filters, kernel, ..
            } => {
                let k2 = kernel * kernel;
                (
                    filters * input.channels * k2,
                    filters,
                    input.channels * k2,
                    filters * k2,
                )
            }
            _ => (0, 0, 0, 0),
        }
    }
}

/// A layer instantiated for a concrete input shape, owning its parameters.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layer<T> {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Geometry of a stride/pad convolution between two shapes.
#[derive(Clone, Copy)]
struct Conv {
    input: Shape,
    output: Shape,
    kernel: usize,
    stride: usize,
    pad: usize,
}

/// Output index range `[lo, hi)` for which `o * stride + offset` lies in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let room = in_len as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let hi = (hi as usize).min(out_len);
    let lo = lo as usize;
    (lo, hi.max(lo))
}

impl Conv {
    /// Rows of the patch matrix: one per (input channel, ky, kx), one column per output pixel.
    fn patch_rows(&self) -> usize {
        self.input.channels * self.kernel * self.kernel
    }

    /// Visits every (patch row, output row) pair with the input row it reads
    /// and the valid output column range.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, isize)) {
        let (ih, iw) = (self.input.height, self.input.width);
        let (oh, ow) = (self.output.height, self.output.width);
        let k = self.kernel;
        for ic in 0..self.input.channels {
            for ky in 0..k {
                let oy_off = ky as isize - self.pad as isize;
                let (y0, y1) = valid_range(oh, ih, self.stride, oy_off);
                for kx in 0..k {
                    let r = (ic * k + ky) * k + kx;
                    let ox_off = kx as isize - self.pad as isize;
                    let (x0, x1) = valid_range(ow, iw, self.stride, ox_off);
                    for oy in y0..y1 {
                        let iy = ((oy * self.stride) as isize + oy_off) as usize;
                        f(r, oy, ic * ih * iw + iy * iw, x0, x1, ox_off);
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let p = self.output.plane();
        let ow = self.output.width;
        let mut cols = vec![T::zero(); self.patch_rows() * p];
        let s = self.stride;
        self.for_each_row(|r, oy, row_start, x0, x1, ox_off| {
            let dst = &mut cols[r * p + oy * ow..r * p + (oy + 1) * ow];
            if s == 1 {
                let s0 = row_start + (x0 as isize + ox_off) as usize;
                dst[x0..x1].copy_from_slice(&x[s0..s0 + (x1 - x0)]);
            } else {
                for ox in x0..x1 {
                    dst[ox] = x[row_start + ((ox * s) as isize + ox_off) as usize];
                }
            }
        });
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.output.plane();
        let ow = self.output.width;
        let s = self.stride;
        dx.fill(T::zero());
        self.for_each_row(|r, oy, row_start, x0, x1, ox_off| {
            let src = &cols[r * p + oy * ow..r * p + (oy + 1) * ow];
            if s == 1 {
                let s0 = row_start + (x0 as isize + ox_off) as usize;
                for (d, &v) in dx[s0..s0 + (x1 - x0)].iter_mut().zip(&src[x0..x1]) {
                    *d += v;
                }
            } else {
                for ox in x0..x1 {
                    dx[row_start + ((ox * s) as isize + ox_off) as usize] += src[ox];
                }
            }
        });
    }

    fn forward<T: Scalar>(&self, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
        let cols = self.im2col(x);
        let p = self.output.plane();
        let kr = self.patch_rows();
        let oc = self.output.channels;
        for (plane, &bv) in out.chunks_exact_mut(p).zip(b) {
            plane.fill(bv);
        }
        gemm(w, View::row_major(oc, kr), &cols, View::row_major(kr, p), T::one(), out, View::row_major(oc, p));
    }

    /// Accumulates weight/bias gradients and writes the input gradient.
    fn backward<T: Scalar>(
        &self,
        x: &[T],
        w: &[T],
        g: &[T],
        dw: &mut [T],
        db: &mut [T],
        dx: &mut [T],
    ) {
        let cols = self.im2col(x);
        let p = self.output.plane();
        let kr = self.patch_rows();
        let oc = self.output.channels;
        for (d, plane) in db.iter_mut().zip(g.chunks_exact(p)) {
            *d += plane.iter().fold(T::zero(), |s, &v| s + v);
        }
        let gv = View::row_major(oc, p);
        gemm(g, gv, &cols, View::row_major(kr, p).t(), T::one(), dw, View::row_major(oc, kr));
        let mut dcols = vec![T::zero(); kr * p];
        gemm(w, View::row_major(oc, kr).t(), g, gv, T::zero(), &mut dcols, View::row_major(kr, p));
        self.col2im(&dcols, dx);
    }
}

fn upsample<T: Scalar>(x: &[T], input: Shape, factor: usize, out: &mut [T]) {
    let (oh, ow) = (input.height * factor, input.width * factor);
    for c in 0..input.channels {
        for oy in 0..oh {
            let src = &x[(c * input.height + oy / factor) * input.width..][..input.width];
            let dst = &mut out[(c * oh + oy) * ow..][..ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / factor];
            }
        }
    }
}

fn upsample_backward<T: Scalar>(g: &[T], input: Shape, factor: usize, dx: &mut [T]) {
    let (oh, ow) = (input.height * factor, input.width * factor);
    dx.fill(T::zero());
    for c in 0..input.channels {
        for oy in 0..oh {
            let src = &g[(c * oh + oy) * ow..][..ow];
            let dst = &mut dx[(c * input.height + oy / factor) * input.width..][..input.width];
            for (ox, &v) in src.iter().enumerate() {
                dst[ox / factor] += v;
            }
        }
    }
}

/// Calls `f(output index, input index of the window maximum)`; first occurrence wins ties.
fn maxpool_argmax<T: Scalar>(
    x: &[T],
    input: Shape,
    output: Shape,
    size: usize,
    stride: usize,
    mut f: impl FnMut(usize, usize),
) {
    let mut o = 0;
    for c in 0..input.channels {
        let plane = &x[c * input.plane()..(c + 1) * input.plane()];
        for oy in 0..output.height {
            for ox in 0..output.width {
                let mut best = oy * stride * input.width + ox * stride;
                let mut best_v = plane[best];
                for ky in 0..size {
                    let row = (oy * stride + ky) * input.width + ox * stride;
                    for (kx, &v) in plane[row..row + size].iter().enumerate() {
                        if v > best_v {
                            best = row + kx;
                            best_v = v;
                        }
                    }
                }
                f(o, c * input.plane() + best);
                o += 1;
            }
        }
    }
}

impl<T: Scalar> Layer<T> {
    fn conv(&self) -> Conv {
        match self.spec {
            LayerSpec::Conv2d { kernel, stride, .. } => Conv {
                input: self.input,
                output: self.output,
                kernel,
                stride,
                pad: (kernel - 1) / 2,
            },
            LayerSpec::TransposedConv2d { kernel, stride, .. } => Conv {
                input: self.upsampled_shape(stride),
                output: self.output,
                kernel,
                stride: 1,
                pad: (kernel - 1) / 2,
            },
            _ => unreachable!("not a convolution"),
        }
    }

    fn upsampled_shape(&self, factor: usize) -> Shape {
        Shape::new(
            self.input.channels,
            self.input.height * factor,
            self.input.width * factor,
        )
    }

    /// `out[b] = W x[b] + bias` for `batch` consecutive samples.
    fn dense_forward(&self, x: &[T], batch: usize, out: &mut [T]) {
        let (n_in, n_out) = (self.input.len(), self.output.len());
        for row in out.chunks_exact_mut(n_out) {
            row.copy_from_slice(&self.bias);
        }
        let wt = View::row_major(n_out, n_in).t();
        gemm(x, View::row_major(batch, n_in), &self.weights, wt, T::one(), out, View::row_major(batch, n_out));
    }

    fn dense_backward(&self, x: &[T], g: &[T], batch: usize, dw: &mut [T], db: &mut [T], dx: &mut [T]) {
        let (n_in, n_out) = (self.input.len(), self.output.len());
        let gv = View::row_major(batch, n_out);
        for row in g.chunks_exact(n_out) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        gemm(g, gv.t(), x, View::row_major(batch, n_in), T::one(), dw, View::row_major(n_out, n_in));
        gemm(g, gv, &self.weights, View::row_major(n_out, n_in), T::zero(), dx, View::row_major(batch, n_in));
    }

    /// Forward pass for `batch` consecutive samples.
    pub fn forward_batch(&self, x: &[T], batch: usize, out: &mut [T]) {
        if let LayerSpec::Dense { .. } = self.spec {
            return self.dense_forward(x, batch, out);
        }
        let (n_in, n_out) = (self.input.len(), self.output.len());
        for (xs, os) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)).take(batch) {
            self.forward_sample(xs, os);
        }
    }

    /// Backward pass for `batch` consecutive samples; parameter gradients accumulate.
    pub fn backward_batch(&self, x: &[T], g: &[T], batch: usize, dw: &mut [T], db: &mut [T], dx: &mut [T]) {
        if let LayerSpec::Dense { .. } = self.spec {
            return self.dense_backward(x, g, batch, dw, db, dx);
        }
        let (n_in, n_out) = (self.input.len(), self.output.len());
        for ((xs, gs), ds) in x
            .chunks_exact(n_in)
            .zip(g.chunks_exact(n_out))
            .zip(dx.chunks_exact_mut(n_in))
            .take(batch)
        {
            self.backward_sample(xs, gs, dw, db, ds);
        }
    }

    /// Forward pass for one sample.
    pub fn forward_sample(&self, x: &[T], out: &mut [T]) {
        match self.spec {
            LayerSpec::Dense { .. } => {
                self.dense_forward(x, 1, out);
            }
            LayerSpec::Conv2d { .. } => self.conv().forward(x, &self.weights, &self.bias, out),
            LayerSpec::TransposedConv2d { stride, .. } => {
                let conv = self.conv();
                let mut up = vec![T::zero(); conv.input.len()];
                upsample(x, self.input, stride, &mut up);
                conv.forward(&up, &self.weights, &self.bias, out);
            }
            LayerSpec::Maxpool2d { size, stride } => {
                maxpool_argmax(x, self.input, self.output, size, stride.unwrap_or(size), |o, i| {
                    out[o] = x[i]
                });
            }
            LayerSpec::Upsample2d { factor } => upsample(x, self.input, factor, out),
            LayerSpec::Relu => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = if v > T::zero() { v } else { T::zero() };
                }
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => out.copy_from_slice(x),
        }
    }

    /// Backward pass for one sample given the layer input `x` and output gradient `g`.
    pub fn backward_sample(&self, x: &[T], g: &[T], dw: &mut [T], db: &mut [T], dx: &mut [T]) {
        match self.spec {
            LayerSpec::Dense { .. } => {
                self.dense_backward(x, g, 1, dw, db, dx);
            }
            LayerSpec::Conv2d { .. } => self.conv().backward(x, &self.weights, g, dw, db, dx),
            LayerSpec::TransposedConv2d { stride, .. } => {
                let conv = self.conv();
                let mut up = vec![T::zero(); conv.input.len()];
                upsample(x, self.input, stride, &mut up);
                let mut dup = vec![T::zero(); conv.input.len()];
                conv.backward(&up, &self.weights, g, dw, db, &mut dup);
                upsample_backward(&dup, self.input, stride, dx);
            }
            LayerSpec::Maxpool2d { size, stride } => {
                dx.fill(T::zero());
                maxpool_argmax(x, self.input, self.output, size, stride.unwrap_or(size), |o, i| {
                    dx[i] += g[o]
                });
            }
            LayerSpec::Upsample2d { factor } => upsample_backward(g, self.input, factor, dx),
            LayerSpec::Relu => {
                for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(x) {
                    *d = if v > T::zero() { gv } else { T::zero() };
                }
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => dx.copy_from_slice(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_covers_in_bounds_outputs() {
        for out_len in 1..8 {
            for in_len in 1..10 {
                for stride in 1..4 {
                    for offset in -3isize..4 {
                        let (lo, hi) = valid_range(out_len, in_len, stride, offset);
                        for o in 0..out_len {
                            let i = (o * stride) as isize + offset;
                            let inside = i >= 0 && i < in_len as isize;
                            assert_eq!(inside, o >= lo && o < hi, "{out_len} {in_len} {stride} {offset} {o}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv_shapes() {
        let s = Shape::new(1, 32, 32);
        let c = LayerSpec::Conv2d {
            filters: 8,
            kernel: 3,
            stride: 1,
        };
        assert_eq!(c.output_shape(s).unwrap(), Shape::new(8, 32, 32));
        let c2 = LayerSpec::Conv2d {
            filters: 4,
            kernel: 3,
            stride: 2,
        };
        assert_eq!(c2.output_shape(s).unwrap(), Shape::new(4, 16, 16));
        let t = LayerSpec::TransposedConv2d {
            filters: 1,
            kernel: 3,
            stride: 2,
        };
        assert_eq!(t.output_shape(Shape::new(8, 16, 16)).unwrap(), Shape::new(1, 32, 32));
        let big = LayerSpec::Conv2d {
            filters: 1,
            kernel: 5,
            stride: 1,
        };
        assert!(big.output_shape(Shape::new(1, 4, 4)).is_err());
    }

    #[test]
    fn spec_json_uses_kebab_kinds() {
        let specs = vec![
            LayerSpec::TransposedConv2d {
                filters: 2,
                kernel: 3,
                stride: 2,
            },
            LayerSpec::Maxpool2d {
                size: 2,
                stride: None,
            },
            LayerSpec::Relu,
        ];
        let json = serde_json::to_string(&specs).unwrap();
        assert_eq!(
            json,
            r#"[{"kind":"transposed-conv2d","filters":2,"kernel":3,"stride":2},{"kind":"maxpool2d","size":2},{"kind":"relu"}]"#
        );
        let back: Vec<LayerSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, specs);
    }
}
