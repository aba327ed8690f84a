//! Minimal feed-forward network engine with hand-written backpropagation.
//!
//! Layers are dense, 2-D convolution, max-pooling, nearest upsampling,
//! transposed convolution (upsample followed by convolution), ReLU, flatten
//! and reshape. Activations are stored channel-major per sample
//! (`[batch][channel][row][col]`). Networks are generic over the scalar so
//! the same code trains in `f32` and is gradient-checked in `f64`.

mod autoencoder;
mod gemm;
mod gradcheck;
mod layer;
mod network;
mod optim;
mod tensor;

pub use autoencoder::{fit_autoencoder, mse, AeConfig, AeFit, Autoencoder, BatchPlan};
pub use gradcheck::{gradient_check, GradientReport};
pub use layer::LayerSpec;
pub use network::{Gradients, Network, ParamGrad};
pub use optim::{OptimConfig, Optimizer, UpdateRule};
pub use tensor::{Batch, Shape, Tensor};

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::Debug;

/// Floating-point element type usable by [`Network`].
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Default + Debug + Send + Sync + 'static
{
    /// Raw strided `c = a * b + beta * c` for an `m x k` by `k x n` product.
    ///
    /// # Safety
    /// Every strided index must be in bounds of its buffer and `c` must not alias `a` or `b`.
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: [isize; 2],
        b: *const Self,
        b_strides: [isize; 2],
        beta: Self,
        c: *mut Self,
        c_strides: [isize; 2],
    );
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        [rsa, csa]: [isize; 2],
        b: *const f32,
        [rsb, csb]: [isize; 2],
        beta: f32,
        c: *mut f32,
        [rsc, csc]: [isize; 2],
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        [rsa, csa]: [isize; 2],
        b: *const f64,
        [rsb, csb]: [isize; 2],
        beta: f64,
        c: *mut f64,
        [rsc, csc]: [isize; 2],
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[inline]
pub(crate) fn from_f64<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 is representable in every Scalar")
}

#[inline]
pub(crate) fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("Scalar converts to f64")
}

/// Derives an independent 64-bit seed for a numbered stream (splitmix64 step).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
