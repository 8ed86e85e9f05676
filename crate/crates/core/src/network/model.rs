//! Whole-network forward and backward passes.
//!
//! The hidden layer's preactivation is formed from one partial product per
//! clique, `((b + p_1) + p_2) + ... + p_M`. [`SegmentCache`] produces the
//! same partials from whole-video trunks, so a probability computed during
//! latent search is bit-identical to [`network_forward`] on the same window
//! selection.

use rayon::prelude::*;

use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::latent::LatentVars;
use crate::layers::dense::dense_backward_raw;
use crate::layers::softmax::softmax_in_place;
use crate::layers::DenseLayer;
use crate::network::clique::{clique_backward, CliqueActivation, Trunk};
use crate::network::{CliqueParams, ModelConfig, Parameters};
use crate::tensor::{Real, Tensor};

/// Clamp applied to probabilities before taking logs in the cost.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug)]
pub(crate) struct HeadOutput<T> {
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub probs: Vec<T>,
}

pub(crate) fn head<T: Real>(params: &Parameters<T>, partials: &[&[T]]) -> Result<HeadOutput<T>> {
    let hidden_pre = params.hidden.combine_partials(partials.iter().copied());
    let hidden: Vec<T> = hidden_pre.iter().map(|z| z.tanh()).collect();
    let p = params.output.partial(&hidden, 0);
    let mut probs = params.output.combine_partials([p.as_slice()]);
    softmax_in_place(&mut probs)?;
    Ok(HeadOutput {
        hidden_pre,
        hidden,
        probs,
    })
}

/// Everything `network_backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct NetworkTrace<T = f32> {
    pub latent: LatentVars,
    pub cliques: Vec<CliqueActivation<T>>,
    pub features: Vec<Tensor<T>>,
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub probabilities: Tensor<T>,
}

impl<T: Real> NetworkTrace<T> {
    pub fn concat(&self) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = self.features.iter().collect();
        crate::tensor::concat_flatten(&refs)
    }
}

fn check_inputs<T: Real>(
    sample: &VideoSample<T>,
    latent: &LatentVars,
    config: &ModelConfig,
) -> Result<()> {
    let expected = [config.channels, config.anchors, config.frame_h, config.frame_w];
    if sample.frames.shape() != expected {
        return Err(Error::dim(format!(
            "sample frames {:?} do not match the model input {expected:?}",
            sample.frames.shape()
        )));
    }
    latent
        .validate(config.anchors, config.cliques, config.min_frames, config.max_frames)
        .map_err(|v| Error::arg(format!("invalid latent variables {latent}: {v}")))
}

/// Copies frames `[start, start + len)` (0-based) of every channel.
pub(crate) fn window_frames<T: Real>(frames: &Tensor<T>, start: usize, len: usize) -> Vec<T> {
    let s = frames.shape();
    let (channels, total, plane) = (s[0], s[1], s[2] * s[3]);
    let mut out = Vec::with_capacity(channels * len * plane);
    for c in 0..channels {
        let base = (c * total + start) * plane;
        out.extend_from_slice(&frames.data()[base..base + len * plane]);
    }
    out
}

fn clique_on_window<T: Real>(
    sample: &VideoSample<T>,
    clique: usize,
    start: usize,
    len: usize,
    params: &CliqueParams<T>,
    config: &ModelConfig,
) -> Result<(Tensor<T>, CliqueActivation<T>)> {
    let frames = window_frames(&sample.frames, start - 1, len);
    let window = Tensor::new(vec![config.channels, len, config.frame_h, config.frame_w], frames)?;
    super::clique_forward(&window, params, config).map_err(|e| match e {
        Error::Argument(m) => Error::arg(format!("clique {}: {m}", clique + 1)),
        other => other,
    })
}

/// Forward pass recording every cache needed for backpropagation.
pub fn forward_trace<T: Real>(
    sample: &VideoSample<T>,
    params: &Parameters<T>,
    latent: &LatentVars,
    config: &ModelConfig,
) -> Result<NetworkTrace<T>> {
    check_inputs(sample, latent, config)?;
    let flen = config.clique_features()?;
    let runs: Vec<(Tensor<T>, CliqueActivation<T>)> = latent
        .windows()
        .iter()
        .enumerate()
        .map(|(i, w)| clique_on_window(sample, i, w.start, w.len, &params.cliques[i], config))
        .collect::<Result<_>>()?;
    let partials: Vec<Vec<T>> = runs
        .iter()
        .enumerate()
        .map(|(i, (f, _))| params.hidden.partial(f.data(), i * flen))
        .collect();
    let refs: Vec<&[T]> = partials.iter().map(Vec::as_slice).collect();
    let out = head(params, &refs)?;
    let (features, cliques) = runs.into_iter().unzip();
    Ok(NetworkTrace {
        latent: latent.clone(),
        cliques,
        features,
        hidden_pre: out.hidden_pre,
        hidden: out.hidden,
        probabilities: Tensor::new(vec![out.probs.len()], out.probs)?,
    })
}

/// Class probabilities `F(X, w, H)`.
pub fn network_forward<T: Real>(
    sample: &VideoSample<T>,
    params: &Parameters<T>,
    latent: &LatentVars,
    config: &ModelConfig,
) -> Result<Tensor<T>> {
    Ok(forward_trace(sample, params, latent, config)?.probabilities)
}

/// Per-sample binary cross-entropy over all `K` outputs.
pub fn sample_loss<T: Real>(probs: &[T], label: usize) -> T {
    let eps = T::from_f64_lossy(PROB_EPSILON);
    let one = T::one();
    probs
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let f = f.max(eps).min(one - eps);
            if k + 1 == label {
                -f.ln()
            } else {
                -(one - f).ln()
            }
        })
        .sum()
}

/// `dL/dlogits` for [`sample_loss`] through the softmax.
fn logit_gradient<T: Real>(probs: &[T], label: usize) -> Vec<T> {
    let eps = T::from_f64_lossy(PROB_EPSILON);
    let one = T::one();
    let g: Vec<T> = probs
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            if f < eps || f > one - eps {
                T::zero()
            } else if k + 1 == label {
                -one / f
            } else {
                one / (one - f)
            }
        })
        .collect();
    let dot: T = g.iter().zip(probs).map(|(&a, &b)| a * b).sum();
    probs.iter().zip(&g).map(|(&f, &gk)| f * (gk - dot)).collect()
}

/// Gradient of `sample_loss + reg_weight * ||w||^2` from a recorded trace.
pub fn backward_from_trace<T: Real>(
    trace: &NetworkTrace<T>,
    params: &Parameters<T>,
    label: usize,
    config: &ModelConfig,
    reg_weight: T,
) -> Result<Parameters<T>> {
    let k = config.classes;
    if label == 0 || label > k {
        return Err(Error::arg(format!("label {label} outside 1..={k}")));
    }
    if trace.cliques.len() != config.cliques || trace.probabilities.len() != k {
        return Err(Error::state("forward trace does not match the model configuration"));
    }
    let probs = trace.probabilities.data();
    let dz = logit_gradient(probs, label);

    let (gw2, dh) = dense_backward_raw(&dz, &trace.hidden, params.output.weights.data(), k);
    let dzh: Vec<T> = dh
        .iter()
        .zip(&trace.hidden)
        .map(|(&g, &h)| g * (T::one() - h * h))
        .collect();
    let concat = trace.concat()?;
    let (gw1, dconcat) = dense_backward_raw(
        &dzh,
        concat.data(),
        params.hidden.weights.data(),
        config.fc_hidden,
    );

    let flen = config.clique_features()?;
    let cliques: Vec<CliqueParams<T>> = trace
        .cliques
        .par_iter()
        .enumerate()
        .map(|(i, act)| {
            clique_backward(&dconcat[i * flen..(i + 1) * flen], act, &params.cliques[i], config)
        })
        .collect::<Result<_>>()?;

    let mut grads = Parameters {
        cliques,
        hidden: DenseLayer::new(
            Tensor::new(params.hidden.weights.shape().to_vec(), gw1)?,
            Tensor::new(vec![dzh.len()], dzh)?,
        )?,
        output: DenseLayer::new(
            Tensor::new(params.output.weights.shape().to_vec(), gw2)?,
            Tensor::new(vec![k], dz)?,
        )?,
    };
    if reg_weight != T::zero() {
        grads.add_scaled(params, reg_weight + reg_weight)?;
    }
    Ok(grads)
}

/// Forward then backward for one labelled sample under fixed `latent`.
pub fn network_backward<T: Real>(
    sample: &VideoSample<T>,
    params: &Parameters<T>,
    latent: &LatentVars,
    label: usize,
    config: &ModelConfig,
    reg_weight: T,
) -> Result<Parameters<T>> {
    let trace = forward_trace(sample, params, latent, config)?;
    backward_from_trace(&trace, params, label, config, reg_weight)
}

/// Hidden-layer partial products for every window each clique may take,
/// computed from one trunk pass per clique over the whole video.
pub struct SegmentCache<T = f32> {
    config: ModelConfig,
    /// Indexed `[clique][start - 1][len - min_frames]`.
    partials: Vec<Vec<Vec<Option<Vec<T>>>>>,
}

impl<T: Real> SegmentCache<T> {
    pub fn build(sample: &VideoSample<T>, params: &Parameters<T>, config: &ModelConfig) -> Result<Self> {
        let (a, m_cl, tau, m) = (config.anchors, config.cliques, config.min_frames, config.max_frames);
        let expected = [config.channels, a, config.frame_h, config.frame_w];
        if sample.frames.shape() != expected {
            return Err(Error::dim(format!(
                "sample frames {:?} do not match the model input {expected:?}",
                sample.frames.shape()
            )));
        }
        if a < m_cl * tau {
            return Err(Error::Config(format!(
                "no valid segmentation: {a} anchors cannot hold {m_cl} segments of at least {tau} frames"
            )));
        }
        let dims = config.stage_dims()?;
        let flen = config.clique_features()?;
        let slots = config.temporal_slots();
        let cell = dims.conv3[0] * dims.conv3[1];
        let shrink = config.temporal_shrink();
        let partials = (0..m_cl)
            .into_par_iter()
            .map(|i| {
                let trunk = Trunk::run(sample.frames.data().to_vec(), a, &params.cliques[i], config, &dims);
                // clique i (0-based) needs i segments before it and m_cl-1-i after it
                let lo = 1 + i * tau;
                let tail = (m_cl - 1 - i) * tau;
                (1..=a)
                    .map(|s| {
                        (tau..=m)
                            .map(|len| {
                                if s < lo || s + len - 1 + tail > a {
                                    return None;
                                }
                                let f = trunk.layout(s - 1, len - shrink, slots, cell);
                                Some(params.hidden.partial(&f, i * flen))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(SegmentCache {
            config: config.clone(),
            partials,
        })
    }

    /// Class probabilities for `latent`, bit-identical to [`network_forward`].
    pub fn probabilities(&self, params: &Parameters<T>, latent: &LatentVars) -> Result<Vec<T>> {
        let c = &self.config;
        latent
            .validate(c.anchors, c.cliques, c.min_frames, c.max_frames)
            .map_err(|v| Error::arg(format!("invalid latent variables {latent}: {v}")))?;
        let tau = c.min_frames;
        let mut refs = Vec::with_capacity(latent.len());
        for (i, w) in latent.windows().iter().enumerate() {
            let p = self
                .partials
                .get(i)
                .and_then(|c| c.get(w.start.wrapping_sub(1)))
                .and_then(|s| s.get(w.len - tau))
                .and_then(Option::as_ref)
                .ok_or_else(|| Error::arg(format!("window {w:?} unavailable for clique {}", i + 1)))?;
            refs.push(p.as_slice());
        }
        Ok(head(params, &refs)?.probs)
    }
}
