use std::fmt;

use crate::error::{Error, Result};
use crate::layers::pooled_extent;

/// Architecture hyperparameters.
///
/// 3D kernel extents are `(h', w', m')`, 2D kernel and pooling extents are
/// `(h, w)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Number of cliques `M`.
    pub cliques: usize,
    /// Maximum frames per clique `m`.
    pub max_frames: usize,
    /// Minimum frames per clique `tau`.
    pub min_frames: usize,
    pub classes: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub channels: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub k1: [usize; 3],
    pub k2: [usize; 3],
    pub k3: [usize; 2],
    pub pool1: [usize; 2],
    pub pool2: [usize; 2],
    pub fc_hidden: usize,
    /// Anchor frames per video `A`.
    pub anchors: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cliques: 4,
            max_frames: 9,
            min_frames: 5,
            classes: 10,
            frame_h: 60,
            frame_w: 80,
            channels: 2,
            c1: 7,
            c2: 5,
            c3: 4,
            k1: [7, 9, 3],
            k2: [7, 7, 3],
            k3: [4, 6],
            pool1: [3, 3],
            pool2: [3, 3],
            fc_hidden: 64,
            anchors: 30,
        }
    }
}

/// Spatial extents `(h, w)` at each stage of a clique.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageDims {
    pub conv1: [usize; 2],
    pub pool1: [usize; 2],
    pub conv2: [usize; 2],
    pub pool2: [usize; 2],
    pub conv3: [usize; 2],
}

pub(crate) const FIELD_NAMES: [&str; 24] = [
    "cliques", "max_frames", "min_frames", "classes", "frame_h", "frame_w", "channels", "c1",
    "c2", "c3", "k1_h", "k1_w", "k1_m", "k2_h", "k2_w", "k2_m", "k3_h", "k3_w", "pool1_h",
    "pool1_w", "pool2_h", "pool2_w", "fc_hidden", "anchors",
];

impl ModelConfig {
    /// Field values in checkpoint order (see [`ModelConfig::field_names`]).
    pub fn to_fields(&self) -> [usize; 24] {
        [
            self.cliques,
            self.max_frames,
            self.min_frames,
            self.classes,
            self.frame_h,
            self.frame_w,
            self.channels,
            self.c1,
            self.c2,
            self.c3,
            self.k1[0],
            self.k1[1],
            self.k1[2],
            self.k2[0],
            self.k2[1],
            self.k2[2],
            self.k3[0],
            self.k3[1],
            self.pool1[0],
            self.pool1[1],
            self.pool2[0],
            self.pool2[1],
            self.fc_hidden,
            self.anchors,
        ]
    }

    pub fn from_fields(f: [usize; 24]) -> Self {
        ModelConfig {
            cliques: f[0],
            max_frames: f[1],
            min_frames: f[2],
            classes: f[3],
            frame_h: f[4],
            frame_w: f[5],
            channels: f[6],
            c1: f[7],
            c2: f[8],
            c3: f[9],
            k1: [f[10], f[11], f[12]],
            k2: [f[13], f[14], f[15]],
            k3: [f[16], f[17]],
            pool1: [f[18], f[19]],
            pool2: [f[20], f[21]],
            fc_hidden: f[22],
            anchors: f[23],
        }
    }

    pub fn field_names() -> &'static [&'static str; 24] {
        &FIELD_NAMES
    }

    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: usize) -> Result<()> {
        let idx = FIELD_NAMES
            .iter()
            .position(|&k| k == key)
            .ok_or_else(|| Error::Config(format!("unknown model key `{key}`")))?;
        let mut fields = self.to_fields();
        fields[idx] = value;
        *self = Self::from_fields(fields);
        Ok(())
    }

    /// Frames consumed by the two temporal convolutions.
    pub fn temporal_shrink(&self) -> usize {
        (self.k1[2] - 1) + (self.k2[2] - 1)
    }

    /// Temporal slots per feature set, i.e. maps produced when `t = m`.
    pub fn temporal_slots(&self) -> usize {
        self.max_frames - self.temporal_shrink()
    }

    pub fn stage_dims(&self) -> Result<StageDims> {
        let conv = |input: [usize; 2], k: [usize; 2], stage: &str| -> Result<[usize; 2]> {
            if k[0] == 0 || k[1] == 0 || k[0] > input[0] || k[1] > input[1] {
                return Err(Error::Config(format!(
                    "{stage} kernel {}x{} does not fit a {}x{} input",
                    k[0], k[1], input[0], input[1]
                )));
            }
            Ok([input[0] - k[0] + 1, input[1] - k[1] + 1])
        };
        let pool = |input: [usize; 2], p: [usize; 2], stage: &str| -> Result<[usize; 2]> {
            if p[0] == 0 || p[1] == 0 || p[0] > input[0] || p[1] > input[1] {
                return Err(Error::Config(format!(
                    "{stage} window {}x{} does not fit a {}x{} map",
                    p[0], p[1], input[0], input[1]
                )));
            }
            Ok([pooled_extent(input[0], p[0]), pooled_extent(input[1], p[1])])
        };
        let conv1 = conv([self.frame_h, self.frame_w], [self.k1[0], self.k1[1]], "first 3D")?;
        let pool1 = pool(conv1, self.pool1, "first pooling")?;
        let conv2 = conv(pool1, [self.k2[0], self.k2[1]], "second 3D")?;
        let pool2 = pool(conv2, self.pool2, "second pooling")?;
        let conv3 = conv(pool2, self.k3, "2D")?;
        Ok(StageDims {
            conv1,
            pool1,
            conv2,
            pool2,
            conv3,
        })
    }

    /// Number of feature sets per clique, `c1 * c2 * c3`.
    pub fn feature_sets(&self) -> usize {
        self.c1 * self.c2 * self.c3
    }

    /// Per-clique feature vector length.
    pub fn clique_features(&self) -> Result<usize> {
        let d = self.stage_dims()?;
        Ok(self.feature_sets() * self.temporal_slots() * d.conv3[0] * d.conv3[1])
    }

    pub fn concat_len(&self) -> Result<usize> {
        Ok(self.cliques * self.clique_features()?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in FIELD_NAMES.iter().zip(self.to_fields()) {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if !(1..=2).contains(&self.channels) {
            return Err(Error::Config(format!(
                "channels must be 1 (gray) or 2 (gray + depth), got {}",
                self.channels
            )));
        }
        if self.k1[2] > self.max_frames
            || self.temporal_shrink() + 1 > self.max_frames
        {
            return Err(Error::Config(format!(
                "temporal kernels ({}, {}) leave no maps for m = {}",
                self.k1[2], self.k2[2], self.max_frames
            )));
        }
        if self.min_frames < self.temporal_shrink() + 1 {
            return Err(Error::Config(format!(
                "min_frames = {} is below the {} frames a segment needs to survive both 3D convolutions",
                self.min_frames,
                self.temporal_shrink() + 1
            )));
        }
        if self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "min_frames = {} exceeds max_frames = {}",
                self.min_frames, self.max_frames
            )));
        }
        self.stage_dims()?;
        Ok(())
    }

    /// Parameter count, computed from the configuration alone.
    pub fn parameter_count(&self) -> Result<usize> {
        let per_clique = self.c1 * (self.channels * self.k1.iter().product::<usize>() + 1)
            + self.c1 * self.c2 * (self.k2.iter().product::<usize>() + 1)
            + self.feature_sets() * (self.k3[0] * self.k3[1] + 1);
        let concat = self.concat_len()?;
        Ok(self.cliques * per_clique
            + concat * self.fc_hidden
            + self.fc_hidden
            + self.fc_hidden * self.classes
            + self.classes)
    }

    /// Same architecture with a different input channel count.
    pub fn with_channels(&self, channels: usize) -> Self {
        ModelConfig {
            channels,
            ..self.clone()
        }
    }

    /// True when everything that shapes the convolutional trunk matches.
    pub fn same_conv_architecture(&self, other: &ModelConfig) -> bool {
        self.cliques == other.cliques
            && self.max_frames == other.max_frames
            && self.frame_h == other.frame_h
            && self.frame_w == other.frame_w
            && self.c1 == other.c1
            && self.c2 == other.c2
            && self.c3 == other.c3
            && self.k1 == other.k1
            && self.k2 == other.k2
            && self.k3 == other.k3
            && self.pool1 == other.pool1
            && self.pool2 == other.pool2
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in FIELD_NAMES.iter().zip(self.to_fields()) {
            writeln!(f, "{name} = {v}")?;
        }
        Ok(())
    }
}
