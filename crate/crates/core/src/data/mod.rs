//! Activity videos: the sample container, preprocessing, dataset manifests
//! and the synthetic RGB-D generator.

mod container;
mod manifest;
mod preprocess;
mod synth;

pub use container::{decode_sample, encode_sample, read_sample, write_sample, SAMPLE_MAGIC, SAMPLE_VERSION};
pub use manifest::{fold_split, DatasetManifest, ManifestEntry};
pub use preprocess::{
    ingest_video_dir, normalize_frames, normalize_frames_to, preprocess_video, resize, resize_to,
    select_anchors, ANCHOR_STRIDE, NORMALIZED_FRAMES,
};
pub use synth::{synth_generate, SynthConfig, SyntheticDataset};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A preprocessed video: frames `(channels, A, H, W)` in `[0, 1]`, channel 0
/// gray and channel 1 depth when present.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample<T = f32> {
    pub frames: Tensor<T>,
    /// Class index, 1-based.
    pub label: usize,
    pub subject_id: u16,
}

impl<T: Real> VideoSample<T> {
    pub fn new(frames: Tensor<T>, label: usize, subject_id: u16) -> Result<Self> {
        let s = VideoSample {
            frames,
            label,
            subject_id,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.ndim() != 4 {
            return Err(Error::dim(format!(
                "sample frames need (channels, A, H, W), got {:?}",
                self.frames.shape()
            )));
        }
        if !(1..=2).contains(&self.channels()) {
            return Err(Error::dim(format!("sample has {} channels", self.channels())));
        }
        if self.label == 0 {
            return Err(Error::arg("labels are 1-based"));
        }
        let (lo, hi) = (T::zero(), T::one());
        if let Some(v) = self.frames.data().iter().find(|&&v| !(v >= lo && v <= hi)) {
            return Err(Error::arg(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn anchors(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn cast<U: Real>(&self) -> VideoSample<U> {
        VideoSample {
            frames: self.frames.cast(),
            label: self.label,
            subject_id: self.subject_id,
        }
    }
}
