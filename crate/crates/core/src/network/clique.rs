//! One clique: 3D conv -> pool -> 3D conv -> pool -> 2D conv over a segment.
//!
//! A segment of `t < m` frames only yields `t - shrink` temporal maps per
//! feature set. Those fill the leading slots of each set; the trailing
//! slots stay zero (inactive) and receive no gradient.

use crate::error::{Error, Result};
use crate::layers::conv::{conv3d_preactivation_into, correlate_backward};
use crate::layers::pool::pool_into;
use crate::layers::Conv3DKernel;
use crate::network::{CliqueParams, ModelConfig, StageDims};
use crate::tensor::{Real, Tensor};

/// Forward state of the convolutional trunk over a contiguous run of frames.
#[derive(Clone, Debug)]
pub(crate) struct Trunk<T> {
    pub frames: usize,
    pub t1: usize,
    pub t2: usize,
    pub input: Vec<T>,
    pub l1_pre: Vec<Vec<T>>,
    pub p1: Vec<Vec<T>>,
    pub p1_arg: Vec<Vec<usize>>,
    pub l2_pre: Vec<Vec<T>>,
    pub p2: Vec<Vec<T>>,
    pub p2_arg: Vec<Vec<usize>>,
    pub out3: Vec<Vec<T>>,
}

fn tanh_vec<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|x| x.tanh()).collect()
}

fn kernel_dims<T: Real>(k: &Conv3DKernel<T>) -> [usize; 4] {
    let s = k.weights.shape();
    [s[0], s[1], s[2], s[3]]
}

impl<T: Real> Trunk<T> {
    /// Runs the trunk over `input`, laid out `(channels, frames, H, W)`.
    pub fn run(
        input: Vec<T>,
        frames: usize,
        params: &CliqueParams<T>,
        config: &ModelConfig,
        dims: &StageDims,
    ) -> Trunk<T> {
        let (c1, c2, c3) = (config.c1, config.c2, config.c3);
        let t1 = frames - (config.k1[2] - 1);
        let t2 = t1 - (config.k2[2] - 1);
        let in_dims = [config.channels, frames, config.frame_h, config.frame_w];

        let n1 = t1 * dims.conv1[0] * dims.conv1[1];
        let np1 = t1 * dims.pool1[0] * dims.pool1[1];
        let mut l1_pre = Vec::with_capacity(c1);
        let mut p1 = Vec::with_capacity(c1);
        let mut p1_arg = Vec::with_capacity(c1);
        for k in &params.conv1 {
            let mut pre = vec![T::zero(); n1];
            conv3d_preactivation_into(&input, in_dims, k.weights.data(), kernel_dims(k), k.bias, &mut pre);
            let act = tanh_vec(&pre);
            let mut pooled = vec![T::zero(); np1];
            let mut arg = vec![0; np1];
            pool_into(&act, [t1, dims.conv1[0], dims.conv1[1]], config.pool1, &mut pooled, &mut arg);
            l1_pre.push(pre);
            p1.push(pooled);
            p1_arg.push(arg);
        }

        let n2 = t2 * dims.conv2[0] * dims.conv2[1];
        let np2 = t2 * dims.pool2[0] * dims.pool2[1];
        let mut l2_pre = Vec::with_capacity(c1 * c2);
        let mut p2 = Vec::with_capacity(c1 * c2);
        let mut p2_arg = Vec::with_capacity(c1 * c2);
        for a in 0..c1 {
            let set_dims = [1, t1, dims.pool1[0], dims.pool1[1]];
            for b in 0..c2 {
                let k = &params.conv2[a * c2 + b];
                let mut pre = vec![T::zero(); n2];
                conv3d_preactivation_into(&p1[a], set_dims, k.weights.data(), kernel_dims(k), k.bias, &mut pre);
                let act = tanh_vec(&pre);
                let mut pooled = vec![T::zero(); np2];
                let mut arg = vec![0; np2];
                pool_into(&act, [t2, dims.conv2[0], dims.conv2[1]], config.pool2, &mut pooled, &mut arg);
                l2_pre.push(pre);
                p2.push(pooled);
                p2_arg.push(arg);
            }
        }

        let n3 = t2 * dims.conv3[0] * dims.conv3[1];
        let mut out3 = Vec::with_capacity(c1 * c2 * c3);
        for (ab, pooled) in p2.iter().enumerate() {
            let set_dims = [1, t2, dims.pool2[0], dims.pool2[1]];
            for c in 0..c3 {
                let k = &params.conv3[ab * c3 + c];
                let mut pre = vec![T::zero(); n3];
                conv3d_preactivation_into(pooled, set_dims, k.weights.data(), kernel_dims(k), k.bias, &mut pre);
                out3.push(tanh_vec(&pre));
            }
        }

        Trunk {
            frames,
            t1,
            t2,
            input,
            l1_pre,
            p1,
            p1_arg,
            l2_pre,
            p2,
            p2_arg,
            out3,
        }
    }

    /// Feature vector for the segment whose first 2D-conv map sits at
    /// `first` and which yields `active` maps.
    pub fn layout(&self, first: usize, active: usize, slots: usize, cell: usize) -> Vec<T> {
        let sets = self.out3.len();
        let mut f = vec![T::zero(); sets * slots * cell];
        for (q, maps) in self.out3.iter().enumerate() {
            let src = &maps[first * cell..(first + active) * cell];
            f[q * slots * cell..q * slots * cell + active * cell].copy_from_slice(src);
        }
        f
    }
}

/// Bookkeeping for one clique forward pass.
#[derive(Clone, Debug)]
pub struct CliqueActivation<T = f32> {
    /// Active temporal maps after the first and second 3D convolutions.
    pub valid_maps: [usize; 2],
    pub active_slots: usize,
    pub slots: usize,
    pub sets: usize,
    /// Spatial cells per 2D-conv map.
    pub cell: usize,
    pub(crate) trunk: Trunk<T>,
}

impl<T: Real> CliqueActivation<T> {
    /// `true` for every feature position that is inactive.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.sets * self.slots * self.cell);
        for _ in 0..self.sets {
            for slot in 0..self.slots {
                m.extend(std::iter::repeat(slot >= self.active_slots).take(self.cell));
            }
        }
        m
    }

    pub fn masked_count(&self) -> usize {
        self.sets * (self.slots - self.active_slots) * self.cell
    }
}

pub(crate) fn check_segment(t: usize, config: &ModelConfig) -> Result<()> {
    if t < config.min_frames || t > config.max_frames {
        return Err(Error::arg(format!(
            "segment of {t} frames is outside [{}, {}]",
            config.min_frames, config.max_frames
        )));
    }
    Ok(())
}

/// Forward pass of one clique over `frames` shaped `(channels, t, H, W)`.
pub fn clique_forward<T: Real>(
    frames: &Tensor<T>,
    params: &CliqueParams<T>,
    config: &ModelConfig,
) -> Result<(Tensor<T>, CliqueActivation<T>)> {
    let dims = config.stage_dims()?;
    let expected = [config.channels, frames.shape().get(1).copied().unwrap_or(0), config.frame_h, config.frame_w];
    if frames.shape() != expected {
        return Err(Error::dim(format!(
            "clique input must be (channels={}, t, {}, {}), got {:?}",
            config.channels,
            config.frame_h,
            config.frame_w,
            frames.shape()
        )));
    }
    let t = expected[1];
    check_segment(t, config)?;
    let trunk = Trunk::run(frames.data().to_vec(), t, params, config, &dims);
    let slots = config.temporal_slots();
    let cell = dims.conv3[0] * dims.conv3[1];
    let active = trunk.t2;
    let features = trunk.layout(0, active, slots, cell);
    let activation = CliqueActivation {
        valid_maps: [trunk.t1, trunk.t2],
        active_slots: active,
        slots,
        sets: config.feature_sets(),
        cell,
        trunk,
    };
    Ok((Tensor::new(vec![features.len()], features)?, activation))
}

/// Parameter gradients of one clique given `dL/dfeatures`.
pub(crate) fn clique_backward<T: Real>(
    grad_features: &[T],
    act: &CliqueActivation<T>,
    params: &CliqueParams<T>,
    config: &ModelConfig,
) -> Result<CliqueParams<T>> {
    let dims = config.stage_dims()?;
    let tr = &act.trunk;
    let (c1, c2, c3) = (config.c1, config.c2, config.c3);
    if grad_features.len() != act.sets * act.slots * act.cell || tr.out3.len() != act.sets {
        return Err(Error::state("clique gradient does not match the cached activation"));
    }
    let (t1, t2, cell) = (tr.t1, tr.t2, act.cell);

    let mut g_conv3 = Vec::with_capacity(c1 * c2 * c3);
    let mut g_p2: Vec<Vec<T>> = vec![vec![T::zero(); t2 * dims.pool2[0] * dims.pool2[1]]; c1 * c2];
    for q in 0..act.sets {
        let upstream = &grad_features[q * act.slots * cell..q * act.slots * cell + t2 * cell];
        let delta: Vec<T> = upstream
            .iter()
            .zip(&tr.out3[q])
            .map(|(&g, &v)| g * (T::one() - v * v))
            .collect();
        let ab = q / c3;
        let k = &params.conv3[q];
        let (gw, gb, gi) = correlate_backward(
            &delta,
            [t2, dims.conv3[0], dims.conv3[1]],
            &tr.p2[ab],
            [1, t2, dims.pool2[0], dims.pool2[1]],
            k.weights.data(),
            kernel_dims(k),
            true,
        );
        for (a, b) in g_p2[ab].iter_mut().zip(gi.unwrap_or_default()) {
            *a += b;
        }
        g_conv3.push(Conv3DKernel::new(Tensor::new(k.weights.shape().to_vec(), gw)?, gb)?);
    }

    let n2 = t2 * dims.conv2[0] * dims.conv2[1];
    let mut g_conv2 = Vec::with_capacity(c1 * c2);
    let mut g_p1: Vec<Vec<T>> = vec![vec![T::zero(); t1 * dims.pool1[0] * dims.pool1[1]]; c1];
    for ab in 0..c1 * c2 {
        let a = ab / c2;
        let mut g_act = vec![T::zero(); n2];
        for (&idx, &g) in tr.p2_arg[ab].iter().zip(&g_p2[ab]) {
            g_act[idx] += g;
        }
        let delta: Vec<T> = g_act
            .iter()
            .zip(&tr.l2_pre[ab])
            .map(|(&g, &z)| {
                let v = z.tanh();
                g * (T::one() - v * v)
            })
            .collect();
        let k = &params.conv2[ab];
        let (gw, gb, gi) = correlate_backward(
            &delta,
            [t2, dims.conv2[0], dims.conv2[1]],
            &tr.p1[a],
            [1, t1, dims.pool1[0], dims.pool1[1]],
            k.weights.data(),
            kernel_dims(k),
            true,
        );
        for (x, y) in g_p1[a].iter_mut().zip(gi.unwrap_or_default()) {
            *x += y;
        }
        g_conv2.push(Conv3DKernel::new(Tensor::new(k.weights.shape().to_vec(), gw)?, gb)?);
    }

    let n1 = t1 * dims.conv1[0] * dims.conv1[1];
    let mut g_conv1 = Vec::with_capacity(c1);
    for a in 0..c1 {
        let mut g_act = vec![T::zero(); n1];
        for (&idx, &g) in tr.p1_arg[a].iter().zip(&g_p1[a]) {
            g_act[idx] += g;
        }
        let delta: Vec<T> = g_act
            .iter()
            .zip(&tr.l1_pre[a])
            .map(|(&g, &z)| {
                let v = z.tanh();
                g * (T::one() - v * v)
            })
            .collect();
        let k = &params.conv1[a];
        let (gw, gb, _) = correlate_backward(
            &delta,
            [t1, dims.conv1[0], dims.conv1[1]],
            &tr.input,
            [config.channels, tr.frames, config.frame_h, config.frame_w],
            k.weights.data(),
            kernel_dims(k),
            false,
        );
        g_conv1.push(Conv3DKernel::new(Tensor::new(k.weights.shape().to_vec(), gw)?, gb)?);
    }

    Ok(CliqueParams {
        conv1: g_conv1,
        conv2: g_conv2,
        conv3: g_conv3,
    })
}
