//! Brute-force search over segmentations.
//!
//! Candidates are split into blocks by their first window and scored in
//! parallel. Blocks are reduced by a max over `(score, tie key)` with the
//! lexicographically smallest segmentation winning ties; the reduction is
//! associative and commutative so the result does not depend on the
//! schedule or the thread count.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::latent::{LatentEnumerator, LatentVars, Window};
use crate::network::{ModelConfig, Parameters, SegmentCache};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T = f32> {
    /// Predicted class, 1-based.
    pub label: usize,
    pub latent: LatentVars,
    pub probability: T,
}

#[derive(Clone, Debug)]
struct Best<T> {
    score: T,
    label: usize,
    latent: LatentVars,
}

// Ordering where "greater" means preferred.
fn prefer<T: Real>(a: &Best<T>, b: &Best<T>) -> Ordering {
    a.score
        .partial_cmp(&b.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.label.cmp(&a.label))
        .then_with(|| b.latent.cmp(&a.latent))
}

fn pick<T: Real>(a: Option<Best<T>>, b: Option<Best<T>>) -> Option<Best<T>> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(if prefer(&a, &b) == Ordering::Less { b } else { a }),
    }
}

fn first_windows(config: &ModelConfig) -> Vec<Window> {
    let (a, m_cl, tau, m) = (config.anchors, config.cliques, config.min_frames, config.max_frames);
    let tail = (m_cl - 1) * tau;
    let mut out = vec![];
    for start in 1..=a {
        for len in tau..=m {
            if start + len - 1 + tail <= a {
                out.push(Window { start, len });
            }
        }
    }
    out
}

fn block(config: &ModelConfig, first: Window) -> Box<dyn Iterator<Item = LatentVars> + Send> {
    if config.cliques == 1 {
        return Box::new(std::iter::once(LatentVars::new(vec![first])));
    }
    let rest = LatentEnumerator::starting_at(
        config.anchors,
        config.cliques - 1,
        config.min_frames,
        config.max_frames,
        first.start + first.len,
    );
    Box::new(rest.map(move |h| {
        let mut w = Vec::with_capacity(h.len() + 1);
        w.push(first);
        w.extend_from_slice(h.windows());
        LatentVars::new(w)
    }))
}

fn search<T: Real>(
    sample: &VideoSample<T>,
    params: &Parameters<T>,
    config: &ModelConfig,
    score: impl Fn(&[T]) -> (T, usize) + Sync,
) -> Result<Best<T>> {
    let cache = SegmentCache::build(sample, params, config)?;
    let blocks = first_windows(config);
    if blocks.is_empty() {
        return Err(Error::Config("no valid segmentation exists".into()));
    }
    let best = blocks
        .par_iter()
        .map(|&first| -> Result<Option<Best<T>>> {
            let mut best = None;
            for h in block(config, first) {
                let probs = cache.probabilities(params, &h)?;
                let (s, label) = score(&probs);
                best = pick(best, Some(Best { score: s, label, latent: h }));
            }
            Ok(best)
        })
        .try_reduce(|| None, |a, b| Ok(pick(a, b)))?;
    best.ok_or_else(|| Error::Config("no valid segmentation exists".into()))
}

/// Segmentation maximizing the probability of the true class `label` (1-based).
pub fn estep_assign<T: Real>(
    sample: &VideoSample<T>,
    label: usize,
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<LatentVars> {
    if label == 0 || label > config.classes {
        return Err(Error::arg(format!("label {label} outside 1..={}", config.classes)));
    }
    let best = search(sample, params, config, |p| (p[label - 1], label))?;
    Ok(best.latent)
}

/// Joint argmax over class labels and segmentations.
pub fn infer<T: Real>(
    sample: &VideoSample<T>,
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<Inference<T>> {
    let best = search(sample, params, config, |p| {
        let mut top = 0;
        for (k, &v) in p.iter().enumerate() {
            if v > p[top] {
                top = k;
            }
        }
        (p[top], top + 1)
    })?;
    Ok(Inference {
        label: best.label,
        latent: best.latent,
        probability: best.score,
    })
}
