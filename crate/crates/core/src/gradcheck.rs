//! Finite-difference verification of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::latent::LatentVars;
use crate::network::{network_backward, network_forward, sample_loss, ModelConfig, Parameters};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
/// Floor on the denominator of the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat parameter index of the worst disagreement.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Small two-clique network that exercises every layer type.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        cliques: 2,
        max_frames: 3,
        min_frames: 2,
        classes: 2,
        frame_h: 8,
        frame_w: 8,
        channels: 2,
        c1: 2,
        c2: 2,
        c3: 1,
        k1: [3, 3, 2],
        k2: [2, 2, 1],
        k3: [1, 1],
        pool1: [2, 2],
        pool2: [2, 2],
        fc_hidden: 6,
        anchors: 8,
    }
}

/// Central differences of `loss + reg_weight * ||w||^2` against the
/// backpropagated gradient, over every parameter.
pub fn gradient_check(
    sample: &VideoSample<f64>,
    params: &Parameters<f64>,
    latent: &LatentVars,
    config: &ModelConfig,
    reg_weight: f64,
    step: f64,
) -> Result<GradCheckReport> {
    let objective = |p: &Parameters<f64>| -> Result<f64> {
        let probs = network_forward(sample, p, latent, config)?;
        Ok(sample_loss(probs.data(), sample.label) + reg_weight * p.norm_squared())
    };
    let analytic = network_backward(sample, params, latent, sample.label, config, reg_weight)?.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..base.len() {
        flat[i] = base[i] + step;
        probe.assign_flat(&flat)?;
        let plus = objective(&probe)?;
        flat[i] = base[i] - step;
        probe.assign_flat(&flat)?;
        let minus = objective(&probe)?;
        flat[i] = base[i];
        let numeric = (plus - minus) / (2.0 * step);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
        }
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Random sample for `config` with uniform pixel values.
pub fn random_sample(config: &ModelConfig, label: usize, seed: u64) -> Result<VideoSample<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [config.channels, config.anchors, config.frame_h, config.frame_w];
    let frames = Tensor::from_fn(&shape, |_| rng.gen::<f64>())?;
    VideoSample::new(frames, label, 1)
}

/// Gradient check of [`tiny_config`] with a short trailing segment, so the
/// inactivation mask is exercised too.
pub fn run_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let config = tiny_config();
    let sample = random_sample(&config, 2, seed)?;
    let params = Parameters::<f32>::init(&config, seed)?.cast::<f64>();
    let latent = LatentVars::from_parts(&[1, 5], &[3, 2]);
    gradient_check(&sample, &params, &latent, &config, 1e-3, DEFAULT_STEP)
}
