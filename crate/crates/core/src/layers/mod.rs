//! Layer primitives with hand-written forward and backward passes.

pub(crate) mod conv;
pub(crate) mod dense;
pub(crate) mod pool;
pub(crate) mod softmax;

pub use conv::{
    conv2d_forward, conv3d_backward, conv3d_forward, correlate3d, Conv3DGrads, Conv3DKernel,
    Conv3DOutput,
};
pub use dense::{dense_backward, dense_forward, Activation, DenseGrads, DenseLayer, DenseOutput};
pub use pool::{maxpool_backward, maxpool_forward, pooled_extent, PoolRecord};
pub use softmax::softmax;

use rand::Rng;

use crate::tensor::Real;

/// Uniform initialization on `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn xavier_uniform<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    fan_in: usize,
    fan_out: usize,
) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-limit..=limit)))
        .collect()
}
