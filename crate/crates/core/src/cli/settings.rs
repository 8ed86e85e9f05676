//! Effective configuration: defaults, then dataset metadata, then the config
//! file, then `--set` overrides.

use std::fs;
use std::path::Path;

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::train::TrainConfig;

use super::Common;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunSettings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if ModelConfig::field_names().contains(&key) {
            let v = value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` needs a non-negative integer, got `{value}`")))?;
            self.model.set(key, v)
        } else {
            self.train.set(key, value)
        }
    }

    pub fn echo(&self) {
        eprint!("# model\n{}# training\n{}", self.model, self.train);
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_settings(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = vec![];
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn resolve(common: &Common, manifest: Option<&DatasetManifest>) -> Result<RunSettings> {
    let mut s = RunSettings::default();
    if let Some(m) = manifest {
        if m.anchors > 0 {
            s.model.anchors = m.anchors;
        }
        if m.frame_h > 0 && m.frame_w > 0 {
            s.model.frame_h = m.frame_h;
            s.model.frame_w = m.frame_w;
        }
        if m.channels > 0 {
            s.model.channels = m.channels;
        }
        if m.classes() > 0 {
            s.model.classes = m.classes();
        }
    }
    if let Some(path) = &common.config {
        let text = read_config(path)?;
        for (k, v) in parse_settings(&text)? {
            s.set(&k, &v)?;
        }
    }
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        s.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        s.train.seed = seed;
    }
    Ok(s)
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}
