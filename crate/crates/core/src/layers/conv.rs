//! Valid 3D cross-correlation followed by `tanh`.
//!
//! `v[t,y,x] = tanh(b + sum_c sum_{k,i,j} w[c,k,i,j] * p[c,t+k,y+i,x+j])`.
//! Per-channel sums are formed separately and added before the bias and the
//! activation. Every output cell accumulates its terms in the same
//! `(k, i, j)` order no matter which temporal range is being computed, so a
//! cell computed over a sub-window of frames is bit-identical to the same
//! cell computed over the whole video.

use crate::error::{Error, Result};
use crate::tensor::{conv_output_shape, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3DKernel<T = f32> {
    /// Shape `(channels, m', h', w')`.
    pub weights: Tensor<T>,
    pub bias: T,
}

impl<T: Real> Conv3DKernel<T> {
    pub fn new(weights: Tensor<T>, bias: T) -> Result<Self> {
        if weights.ndim() != 4 {
            return Err(Error::dim(format!(
                "3D kernel weights need 4 axes (channels, m', h', w'), got {:?}",
                weights.shape()
            )));
        }
        Ok(Conv3DKernel { weights, bias })
    }

    pub fn zeros(channels: usize, m: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[channels, m, h, w])?, T::zero())
    }

    pub fn channels(&self) -> usize {
        self.weights.shape()[0]
    }

    /// `(m', h', w')`.
    pub fn extents(&self) -> [usize; 3] {
        let s = self.weights.shape();
        [s[1], s[2], s[3]]
    }
}

#[derive(Clone, Debug)]
pub struct Conv3DOutput<T = f32> {
    pub output: Tensor<T>,
    pub preactivation: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Conv3DGrads<T = f32> {
    pub grad_input: Option<Tensor<T>>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: T,
}

fn dims4(t: &Tensor<impl Real>, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [c, d, h, w] => Ok([c, d, h, w]),
        ref s => Err(Error::dim(format!(
            "{what} needs 4 axes (channels, T, H, W), got {s:?}"
        ))),
    }
}

fn output_dims(input: [usize; 4], kernel: [usize; 4]) -> Result<[usize; 3]> {
    if input[0] != kernel[0] {
        return Err(Error::dim(format!(
            "input has {} channels but kernel has {}",
            input[0], kernel[0]
        )));
    }
    let o = conv_output_shape(&input[1..], &kernel[1..])?;
    Ok([o[0], o[1], o[2]])
}

/// Raw single-channel correlation sums into `out` (overwritten).
#[allow(clippy::too_many_arguments)]
fn correlate_channel<T: Real>(
    input: &[T],
    in_dims: [usize; 3],
    weights: &[T],
    k_dims: [usize; 3],
    out: &mut [T],
    out_dims: [usize; 3],
) {
    let [_, ih, iw] = in_dims;
    let [km, kh, kw] = k_dims;
    let [ot, oh, ow] = out_dims;
    out.fill(T::zero());
    for t in 0..ot {
        let plane = &mut out[t * oh * ow..(t + 1) * oh * ow];
        for k in 0..km {
            let frame = &input[(t + k) * ih * iw..(t + k + 1) * ih * iw];
            for i in 0..kh {
                for j in 0..kw {
                    let w = weights[(k * kh + i) * kw + j];
                    for y in 0..oh {
                        let src = &frame[(y + i) * iw + j..(y + i) * iw + j + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
}

/// Channel-summed correlation without bias or activation.
pub fn correlate3d<T: Real>(input: &Tensor<T>, kernel: &Conv3DKernel<T>) -> Result<Tensor<T>> {
    let in_dims = dims4(input, "conv3d input")?;
    let k_dims = dims4(&kernel.weights, "conv3d kernel")?;
    let out_dims = output_dims(in_dims, k_dims)?;
    let n = out_dims.iter().product();
    let mut acc = vec![T::zero(); n];
    correlate_all(input.data(), in_dims, kernel.weights.data(), k_dims, &mut acc, out_dims);
    Tensor::new(out_dims.to_vec(), acc)
}

fn correlate_all<T: Real>(
    input: &[T],
    in_dims: [usize; 4],
    weights: &[T],
    k_dims: [usize; 4],
    acc: &mut [T],
    out_dims: [usize; 3],
) {
    let channels = in_dims[0];
    let in_plane = in_dims[1] * in_dims[2] * in_dims[3];
    let k_plane = k_dims[1] * k_dims[2] * k_dims[3];
    let in3 = [in_dims[1], in_dims[2], in_dims[3]];
    let k3 = [k_dims[1], k_dims[2], k_dims[3]];
    correlate_channel(&input[..in_plane], in3, &weights[..k_plane], k3, acc, out_dims);
    if channels > 1 {
        let mut scratch = vec![T::zero(); acc.len()];
        for c in 1..channels {
            correlate_channel(
                &input[c * in_plane..(c + 1) * in_plane],
                in3,
                &weights[c * k_plane..(c + 1) * k_plane],
                k3,
                &mut scratch,
                out_dims,
            );
            for (a, &s) in acc.iter_mut().zip(&scratch) {
                *a += s;
            }
        }
    }
}

pub fn conv3d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Conv3DKernel<T>,
) -> Result<Conv3DOutput<T>> {
    let mut pre = correlate3d(input, kernel)?;
    for v in pre.data_mut() {
        *v += kernel.bias;
    }
    let output = pre.map(|v| v.tanh());
    Ok(Conv3DOutput {
        output,
        preactivation: pre,
    })
}

/// 2D convolution over every temporal map of a `(T, H, W)` set, as the
/// temporal-length-one case of [`conv3d_forward`]. `kernel` has shape
/// `(1, 1, h', w')`.
pub fn conv2d_forward<T: Real>(
    maps: &Tensor<T>,
    kernel: &Conv3DKernel<T>,
) -> Result<Conv3DOutput<T>> {
    if kernel.extents()[0] != 1 || kernel.channels() != 1 {
        return Err(Error::dim(format!(
            "2D kernel must have shape (1, 1, h', w'), got {:?}",
            kernel.weights.shape()
        )));
    }
    let lifted = match *maps.shape() {
        [t, h, w] => maps.clone().reshape(&[1, t, h, w])?,
        [h, w] => maps.clone().reshape(&[1, 1, h, w])?,
        ref s => {
            return Err(Error::dim(format!(
                "2D convolution input needs (T, H, W) or (H, W), got {s:?}"
            )))
        }
    };
    conv3d_forward(&lifted, kernel)
}

/// Gradients of [`conv3d_forward`] given the upstream gradient of its
/// output. `grad_input` is only formed when `want_input_grad` is set.
pub fn conv3d_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    cached_preactivation: &Tensor<T>,
    kernel: &Conv3DKernel<T>,
    want_input_grad: bool,
) -> Result<Conv3DGrads<T>> {
    let in_dims = dims4(cached_input, "cached conv3d input")?;
    let k_dims = dims4(&kernel.weights, "conv3d kernel")?;
    let out_dims = output_dims(in_dims, k_dims)?;
    if cached_preactivation.shape() != out_dims || grad_out.shape() != out_dims {
        return Err(Error::state(format!(
            "conv3d cache mismatch: expected output shape {out_dims:?}, got preactivation {:?} and gradient {:?}",
            cached_preactivation.shape(),
            grad_out.shape()
        )));
    }
    let delta: Vec<T> = grad_out
        .data()
        .iter()
        .zip(cached_preactivation.data())
        .map(|(&g, &z)| {
            let v = z.tanh();
            g * (T::one() - v * v)
        })
        .collect();
    let (grad_weights, grad_bias, grad_input) = correlate_backward(
        &delta,
        out_dims,
        cached_input.data(),
        in_dims,
        kernel.weights.data(),
        k_dims,
        want_input_grad,
    );
    Ok(Conv3DGrads {
        grad_input: grad_input
            .map(|g| Tensor::new(in_dims.to_vec(), g))
            .transpose()?,
        grad_weights: Tensor::new(k_dims.to_vec(), grad_weights)?,
        grad_bias,
    })
}

/// Backward pass through the raw correlation given `delta = dL/dpre`.
pub(crate) fn correlate_backward<T: Real>(
    delta: &[T],
    out_dims: [usize; 3],
    input: &[T],
    in_dims: [usize; 4],
    weights: &[T],
    k_dims: [usize; 4],
    want_input_grad: bool,
) -> (Vec<T>, T, Option<Vec<T>>) {
    let [channels, _, ih, iw] = in_dims;
    let [_, km, kh, kw] = k_dims;
    let [ot, oh, ow] = out_dims;
    let in_plane = in_dims[1] * ih * iw;
    let k_plane = km * kh * kw;

    let grad_bias = delta.iter().copied().sum();
    let mut gw = vec![T::zero(); weights.len()];
    let mut gi = want_input_grad.then(|| vec![T::zero(); input.len()]);

    for c in 0..channels {
        let inp = &input[c * in_plane..(c + 1) * in_plane];
        for t in 0..ot {
            let dplane = &delta[t * oh * ow..(t + 1) * oh * ow];
            for k in 0..km {
                let frame_off = c * in_plane + (t + k) * ih * iw;
                let frame = &inp[(t + k) * ih * iw..(t + k + 1) * ih * iw];
                for i in 0..kh {
                    for j in 0..kw {
                        let widx = c * k_plane + (k * kh + i) * kw + j;
                        let mut acc = T::zero();
                        for y in 0..oh {
                            let src = &frame[(y + i) * iw + j..(y + i) * iw + j + ow];
                            let d = &dplane[y * ow..(y + 1) * ow];
                            for (&a, &b) in d.iter().zip(src) {
                                acc += a * b;
                            }
                        }
                        gw[widx] += acc;
                        if let Some(gi) = gi.as_mut() {
                            let w = weights[widx];
                            for y in 0..oh {
                                let base = frame_off + (y + i) * iw + j;
                                let dst = &mut gi[base..base + ow];
                                let d = &dplane[y * ow..(y + 1) * ow];
                                for (g, &a) in dst.iter_mut().zip(d) {
                                    *g += w * a;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gw, grad_bias, gi)
}

/// Slice-level forward used by the network: writes preactivations
/// (bias included) into `pre`.
pub(crate) fn conv3d_preactivation_into<T: Real>(
    input: &[T],
    in_dims: [usize; 4],
    weights: &[T],
    k_dims: [usize; 4],
    bias: T,
    pre: &mut [T],
) -> [usize; 3] {
    let out_dims = [
        in_dims[1] - k_dims[1] + 1,
        in_dims[2] - k_dims[2] + 1,
        in_dims[3] - k_dims[3] + 1,
    ];
    correlate_all(input, in_dims, weights, k_dims, pre, out_dims);
    for v in pre.iter_mut() {
        *v += bias;
    }
    out_dims
}
