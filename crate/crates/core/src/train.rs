//! Cost function, SGD epochs and the alternating latent/parameter training
//! loop.
//!
//! Each iteration first re-estimates every sample's segmentation with the
//! parameters held fixed (E-step), then runs one shuffled SGD pass over all
//! samples with the segmentations held fixed (M-step). Pretraining and the
//! fixed-segmentation baseline skip the E-step and keep the even split.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::latent::{enumerate, estep_assign, even_split, infer, Inference, LatentVars};
use crate::network::{network_backward, network_forward, sample_loss, ModelConfig, Parameters};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Lsbp,
    FixedEven,
    Pretrain2d,
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsbp" => Ok(TrainMode::Lsbp),
            "fixed_even" => Ok(TrainMode::FixedEven),
            "pretrain_2d" => Ok(TrainMode::Pretrain2d),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected lsbp, fixed_even or pretrain_2d)"
            ))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Lsbp => "lsbp",
            TrainMode::FixedEven => "fixed_even",
            TrainMode::Pretrain2d => "pretrain_2d",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight on `||w||^2` in the cost.
    pub reg_lambda: f64,
    pub max_iterations: usize,
    /// Stop once the relative cost decrease over a full iteration falls below this.
    pub convergence_tol: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Leading iterations that keep the even split and skip the E-step, so
    /// latent estimation starts from parameters that already see content.
    pub warmup_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            reg_lambda: 1e-4,
            max_iterations: 200,
            convergence_tol: 1e-3,
            seed: 0,
            mode: TrainMode::Lsbp,
            warmup_iterations: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            return Err(Error::Config(format!("reg_lambda must be >= 0, got {}", self.reg_lambda)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value `{value}` for `{key}`"));
        match key {
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad())?,
            "reg_lambda" => self.reg_lambda = value.parse().map_err(|_| bad())?,
            "max_iterations" => self.max_iterations = value.parse().map_err(|_| bad())?,
            "convergence_tol" => self.convergence_tol = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "mode" => self.mode = value.parse()?,
            "warmup_iterations" => self.warmup_iterations = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "reg_lambda = {}", self.reg_lambda)?;
        writeln!(f, "max_iterations = {}", self.max_iterations)?;
        writeln!(f, "convergence_tol = {}", self.convergence_tol)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "warmup_iterations = {}", self.warmup_iterations)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cost {
    pub total: f64,
    pub data_term: f64,
    pub reg_term: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Init,
    E,
    M,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Init => "I",
            Phase::E => "E",
            Phase::M => "M",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub cost: Cost,
    pub wall_ms: u128,
}

impl CostRecord {
    /// `iter,phase,J,data_term,reg_term,wall_ms`
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{}",
            self.iteration, self.phase, self.cost.total, self.cost.data_term, self.cost.reg_term, self.wall_ms
        )
    }
}

pub const TRAIN_LOG_HEADER: &str = "iter,phase,J,data_term,reg_term,wall_ms";

#[derive(Clone, Debug)]
pub struct TrainState<T = f32> {
    pub params: Parameters<T>,
    pub latent: Vec<LatentVars>,
    pub cost_history: Vec<CostRecord>,
    pub iteration: usize,
    /// Iteration at which the convergence test first passed.
    pub converged_at: Option<usize>,
}

fn check_dataset<T: Real>(dataset: &[VideoSample<T>], config: &ModelConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.channels() != config.channels {
            return Err(Error::arg(format!(
                "sample {i} has {} channels, model expects {}",
                s.channels(),
                config.channels
            )));
        }
        if s.label == 0 || s.label > config.classes {
            return Err(Error::arg(format!("sample {i} label {} outside 1..={}", s.label, config.classes)));
        }
    }
    Ok(())
}

/// Per-sample data losses, in dataset order.
pub fn sample_losses<T: Real>(
    dataset: &[VideoSample<T>],
    params: &Parameters<T>,
    latent: &[LatentVars],
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    if latent.len() != dataset.len() {
        return Err(Error::arg(format!(
            "{} segmentations for {} samples",
            latent.len(),
            dataset.len()
        )));
    }
    dataset
        .par_iter()
        .zip(latent.par_iter())
        .map(|(s, h)| {
            let probs = network_forward(s, params, h, config)?;
            Ok(sample_loss(probs.data(), s.label).to_f64().unwrap_or(f64::NAN))
        })
        .collect()
}

/// Mean binary cross-entropy over all outputs plus `reg_lambda * ||w||^2`.
pub fn cost<T: Real>(
    dataset: &[VideoSample<T>],
    params: &Parameters<T>,
    latent: &[LatentVars],
    config: &ModelConfig,
    reg_lambda: f64,
) -> Result<Cost> {
    let losses = sample_losses(dataset, params, latent, config)?;
    let data_term = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
    let reg_term = reg_lambda * params.norm_squared().to_f64().unwrap_or(f64::NAN);
    Ok(Cost {
        total: data_term + reg_term,
        data_term,
        reg_term,
    })
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass of per-sample SGD over the whole dataset in a seeded order.
pub fn sgd_epoch<T: Real>(
    dataset: &[VideoSample<T>],
    latent: &[LatentVars],
    params: &Parameters<T>,
    config: &ModelConfig,
    train: &TrainConfig,
    epoch: usize,
) -> Result<Parameters<T>> {
    check_dataset(dataset, config)?;
    if latent.len() != dataset.len() {
        return Err(Error::arg("one segmentation per sample is required"));
    }
    let n = dataset.len();
    let lr = T::from_f64_lossy(train.learning_rate);
    let reg = T::from_f64_lossy(train.reg_lambda / n as f64);
    let mut params = params.clone();
    if train.learning_rate == 0.0 {
        return Ok(params);
    }
    for i in epoch_order(n, train.seed, epoch) {
        let s = &dataset[i];
        let grads = network_backward(s, &params, &latent[i], s.label, config, reg)?;
        if !grads.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient on sample {i}")));
        }
        params.add_scaled(&grads, -lr)?;
    }
    Ok(params)
}

/// Starting segmentation: the even split when valid, else the first valid one.
pub fn initial_latent(config: &ModelConfig) -> Result<LatentVars> {
    let (a, m_cl, tau, m) = (config.anchors, config.cliques, config.min_frames, config.max_frames);
    match even_split(a, m_cl, m) {
        Some(h) if h.is_valid(a, m_cl, tau, m) => Ok(h),
        _ => enumerate(a, m_cl, tau, m)
            .next()
            .ok_or_else(|| Error::Config("no valid segmentation exists".into())),
    }
}

fn fixed_latent(config: &ModelConfig) -> Result<LatentVars> {
    let (a, m_cl, tau, m) = (config.anchors, config.cliques, config.min_frames, config.max_frames);
    even_split(a, m_cl, m)
        .filter(|h| h.is_valid(a, m_cl, tau, m))
        .ok_or_else(|| Error::Config(format!("even split of {a} anchors into {m_cl} segments violates [{tau}, {m}]")))
}

/// Segmentations maximizing each sample's true-class probability.
pub fn estep_all<T: Real>(
    dataset: &[VideoSample<T>],
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<Vec<LatentVars>> {
    dataset
        .par_iter()
        .map(|s| estep_assign(s, s.label, params, config))
        .collect()
}

pub fn lsbp_train<T: Real>(
    dataset: &[VideoSample<T>],
    init: &Parameters<T>,
    config: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainState<T>> {
    lsbp_train_observed(dataset, init, config, train, |_| {})
}

/// [`lsbp_train`] reporting every cost record as soon as it is computed.
pub fn lsbp_train_observed<T: Real>(
    dataset: &[VideoSample<T>],
    init: &Parameters<T>,
    config: &ModelConfig,
    train: &TrainConfig,
    mut observe: impl FnMut(&CostRecord),
) -> Result<TrainState<T>> {
    config.validate()?;
    train.validate()?;
    check_dataset(dataset, config)?;
    init.check_shapes(config)?;
    let start = Instant::now();
    let structured = train.mode == TrainMode::Lsbp;
    let h0 = if structured && train.warmup_iterations == 0 {
        initial_latent(config)?
    } else {
        fixed_latent(config)?
    };
    let mut state = TrainState {
        params: init.clone(),
        latent: vec![h0; dataset.len()],
        cost_history: vec![],
        iteration: 0,
        converged_at: None,
    };
    let mut record = |state: &mut TrainState<T>, iteration, phase, cost: Cost| -> Result<()> {
        if !cost.total.is_finite() {
            return Err(Error::Numeric(format!("cost became non-finite at iteration {iteration}")));
        }
        let r = CostRecord {
            iteration,
            phase,
            cost,
            wall_ms: start.elapsed().as_millis(),
        };
        observe(&r);
        state.cost_history.push(r);
        Ok(())
    };
    let j0 = cost(dataset, &state.params, &state.latent, config, train.reg_lambda)?;
    record(&mut state, 0, Phase::Init, j0)?;
    let mut previous = j0.total;
    for it in 1..=train.max_iterations {
        state.iteration = it;
        let warming = it <= train.warmup_iterations;
        if structured && !warming {
            state.latent = estep_all(dataset, &state.params, config)?;
            let j = cost(dataset, &state.params, &state.latent, config, train.reg_lambda)?;
            record(&mut state, it, Phase::E, j)?;
        }
        state.params = sgd_epoch(dataset, &state.latent, &state.params, config, train, it - 1)?;
        let j = cost(dataset, &state.params, &state.latent, config, train.reg_lambda)?;
        record(&mut state, it, Phase::M, j)?;
        let decrease = (previous - j.total) / previous.abs().max(f64::MIN_POSITIVE);
        previous = j.total;
        if !warming && decrease < train.convergence_tol {
            state.converged_at = Some(it);
            break;
        }
    }
    Ok(state)
}

/// Trains single-channel parameters with a fixed even segmentation and
/// plain backpropagation.
pub fn pretrain<T: Real>(
    dataset: &[VideoSample<T>],
    config: &ModelConfig,
    train: &TrainConfig,
) -> Result<Parameters<T>> {
    if config.channels != 1 {
        return Err(Error::arg(format!(
            "pretraining uses single-channel data, config has {} channels",
            config.channels
        )));
    }
    let init = Parameters::init(config, train.seed)?;
    let fixed = TrainConfig {
        mode: TrainMode::Pretrain2d,
        ..train.clone()
    };
    Ok(lsbp_train(dataset, &init, config, &fixed)?.params)
}

/// Brute-force inference over a dataset, in order.
pub fn infer_all<T: Real>(
    dataset: &[VideoSample<T>],
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<Vec<Inference<T>>> {
    dataset.par_iter().map(|s| infer(s, params, config)).collect()
}

/// Fraction of samples whose inferred label matches.
pub fn accuracy<T: Real>(dataset: &[VideoSample<T>], predictions: &[Inference<T>]) -> f64 {
    let hits = dataset
        .iter()
        .zip(predictions)
        .filter(|(s, p)| s.label == p.label)
        .count();
    hits as f64 / dataset.len().max(1) as f64
}
