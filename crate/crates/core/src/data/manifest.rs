//! Dataset manifests.
//!
//! The manifest itself is CSV with header `path,label,subject,fold`. Class
//! names and the preprocessing echo (A, frame size, channels) live in a
//! sidecar `<manifest>.meta` of `key = value` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub subject: u16,
    /// 1-based fold, 0 when unassigned.
    pub fold: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub anchors: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub channels: usize,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    Error::format(offset, e.to_string())
}

impl DatasetManifest {
    pub fn subjects(&self) -> BTreeSet<u16> {
        self.entries.iter().map(|e| e.subject).collect()
    }

    pub fn folds(&self) -> usize {
        self.entries.iter().map(|e| e.fold).max().unwrap_or(0)
    }

    pub fn classes(&self) -> usize {
        self.class_names
            .len()
            .max(self.entries.iter().map(|e| e.label).max().unwrap_or(0))
    }

    /// Resolves an entry path relative to the manifest's directory.
    pub fn resolve(&self, manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["path", "label", "subject", "fold"]).map_err(csv_err)?;
        for e in &self.entries {
            w.write_record([
                e.path.clone(),
                e.label.to_string(),
                e.subject.to_string(),
                e.fold.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        let meta = format!(
            "classes = {}\nanchors = {}\nframe_h = {}\nframe_w = {}\nchannels = {}\n",
            self.class_names.join(","),
            self.anchors,
            self.frame_h,
            self.frame_w,
            self.channels
        );
        fs::write(meta_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != ["path", "label", "subject", "fold"] {
            return Err(Error::format(0, format!("manifest header must be `path,label,subject,fold`, got `{}`", header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut entries = vec![];
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
            let field = |i: usize| rec.get(i).unwrap_or("").trim();
            let num = |i: usize, what: &str| -> Result<usize> {
                field(i)
                    .parse()
                    .map_err(|_| Error::format(offset, format!("bad {what} `{}`", field(i))))
            };
            entries.push(ManifestEntry {
                path: field(0).to_string(),
                label: num(1, "label")?,
                subject: u16::try_from(num(2, "subject")?)
                    .map_err(|_| Error::format(offset, "subject id exceeds u16"))?,
                fold: num(3, "fold")?,
            });
        }
        let mut m = DatasetManifest {
            entries,
            ..Default::default()
        };
        let meta = meta_path(path);
        if meta.exists() {
            for line in fs::read_to_string(&meta)?.lines() {
                let Some((k, v)) = line.split_once('=') else { continue };
                let (k, v) = (k.trim(), v.trim());
                let parse = |v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("bad `{k}` in {}", meta.display())));
                match k {
                    "classes" => {
                        m.class_names = v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect()
                    }
                    "anchors" => m.anchors = parse(v)?,
                    "frame_h" => m.frame_h = parse(v)?,
                    "frame_w" => m.frame_w = parse(v)?,
                    "channels" => m.channels = parse(v)?,
                    _ => {}
                }
            }
        }
        Ok(m)
    }
}

/// Assigns whole subjects to `folds` folds of near-equal size (seeded).
pub fn fold_split(manifest: &DatasetManifest, folds: usize, seed: u64) -> Result<DatasetManifest> {
    let mut subjects: Vec<u16> = manifest.subjects().into_iter().collect();
    if folds == 0 || subjects.len() < folds {
        return Err(Error::arg(format!(
            "cannot split {} subjects into {folds} folds",
            subjects.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    let fold_of: BTreeMap<u16, usize> = subjects
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i % folds + 1))
        .collect();
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.fold = fold_of[&e.subject];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(subjects: u16, per: usize) -> DatasetManifest {
        let mut entries = vec![];
        for s in 1..=subjects {
            for i in 0..per {
                entries.push(ManifestEntry {
                    path: format!("s{s}_{i}.rgbd"),
                    label: i % 3 + 1,
                    subject: s,
                    fold: 0,
                });
            }
        }
        DatasetManifest {
            entries,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            anchors: 30,
            frame_h: 60,
            frame_w: 80,
            channels: 2,
        }
    }

    fn fold_subjects(m: &DatasetManifest) -> BTreeMap<usize, BTreeSet<u16>> {
        let mut out: BTreeMap<usize, BTreeSet<u16>> = BTreeMap::new();
        for e in &m.entries {
            out.entry(e.fold).or_default().insert(e.subject);
        }
        out
    }

    #[test]
    fn one_subject_per_fold() {
        let m = fold_split(&manifest(4, 3), 4, 7).unwrap();
        let f = fold_subjects(&m);
        assert_eq!(f.len(), 4);
        assert!(f.values().all(|s| s.len() == 1));
    }

    #[test]
    fn single_fold() {
        let m = fold_split(&manifest(3, 2), 1, 0).unwrap();
        assert!(m.entries.iter().all(|e| e.fold == 1));
    }

    #[test]
    fn ten_subjects_five_folds() {
        let m = fold_split(&manifest(10, 2), 5, 3).unwrap();
        let f = fold_subjects(&m);
        assert_eq!(f.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert!(f.values().all(|s| s.len() == 2));
        let mut seen = BTreeSet::new();
        for s in f.values().flatten() {
            assert!(seen.insert(*s), "subject {s} in two folds");
        }
    }

    #[test]
    fn too_few_subjects() {
        assert!(matches!(fold_split(&manifest(2, 2), 3, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        let m = fold_split(&manifest(4, 2), 2, 1).unwrap();
        m.save(&p).unwrap();
        let first = fs::read_to_string(&p).unwrap();
        assert!(first.starts_with("path,label,subject,fold\n"));
        assert_eq!(DatasetManifest::load(&p).unwrap(), m);
    }
}
