use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::{
    fold_split, ingest_video_dir, preprocess_video, read_sample, synth_generate, write_sample, DatasetManifest,
    ManifestEntry, SynthConfig, VideoSample,
};
use crate::error::{Error, Result};
use crate::gradcheck::run_gradcheck;
use crate::latent::Inference;
use crate::network::{load_checkpoint, save_checkpoint, transfer_pretrained, ModelConfig, Parameters};
use crate::tensor::Tensor;
use crate::train::{infer_all, lsbp_train_observed, TrainConfig, TrainMode, TRAIN_LOG_HEADER};

use super::settings::{resolve, RunSettings};
use super::{Command, Common, EXIT_NUMERIC, EXIT_OK};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub(super) fn run(command: Command) -> Result<i32> {
    match command {
        Command::Preprocess { input, output, common } => preprocess(&input, &output, &common),
        Command::Synth {
            output,
            per_class,
            subjects,
            noise,
            fixed_boundaries,
            shared_motifs,
            folds,
            common,
        } => {
            let s = settings(&common, None)?;
            let cfg = SynthConfig {
                subjects,
                noise,
                randomize_boundaries: !fixed_boundaries,
                shared_motifs,
                ..SynthConfig::for_model(&s.model, per_class, s.train.seed)
            };
            synth(&cfg, folds, s.train.seed, &output)
        }
        Command::Pretrain {
            manifest,
            output,
            log,
            common,
        } => {
            let (m, samples) = load_dataset(&manifest, None, None)?;
            let s = settings(&common, Some(&m))?;
            let gray_config = s.model.with_channels(1);
            gray_config.validate()?;
            let gray = samples.iter().map(gray_only).collect::<Result<Vec<_>>>()?;
            let init = Parameters::init(&gray_config, s.train.seed)?;
            let train = TrainConfig {
                mode: TrainMode::Pretrain2d,
                ..s.train.clone()
            };
            let params = with_log(log.as_deref(), |w| train_logged(&gray, &init, &gray_config, &train, w))?;
            save_checkpoint(&params, &gray_config, &output)?;
            Ok(EXIT_OK)
        }
        Command::Train {
            manifest,
            output,
            log,
            init_from,
            mode,
            exclude_fold,
            common,
        } => {
            let (m, samples) = load_dataset(&manifest, None, exclude_fold)?;
            let s = settings_with_mode(&common, &m, mode.as_deref())?;
            s.model.validate()?;
            let init = initial_params(&s, init_from.as_deref())?;
            let params = with_log(log.as_deref(), |w| train_logged(&samples, &init, &s.model, &s.train, w))?;
            save_checkpoint(&params, &s.model, &output)?;
            Ok(EXIT_OK)
        }
        Command::Infer {
            manifest,
            checkpoint,
            output,
            fold,
        } => {
            let (params, config) = load_checkpoint(&checkpoint)?;
            config.validate()?;
            let (m, samples) = load_dataset(&manifest, fold, None)?;
            check_compatible(&samples, &config)?;
            let preds = infer_all(&samples, &params, &config)?;
            let entries: Vec<&ManifestEntry> = selected(&m, fold, None).collect();
            let mut out: Box<dyn Write> = match output {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(io::stdout().lock()),
            };
            write_predictions(&mut out, &entries, &preds, config.cliques)?;
            out.flush()?;
            Ok(EXIT_OK)
        }
        Command::Eval {
            manifest,
            output_dir,
            folds,
            common,
        } => eval(&manifest, &output_dir, folds, &common),
        Command::Gradcheck { seed } => {
            let report = run_gradcheck(seed)?;
            println!(
                "parameters = {}\nmax_rel_error = {:e}\nworst_index = {}\nanalytic = {:e}\nnumeric = {:e}",
                report.checked, report.max_rel_error, report.worst_index, report.analytic, report.numeric
            );
            if report.max_rel_error > GRADCHECK_TOLERANCE {
                eprintln!("gradient check failed: {:e} > {GRADCHECK_TOLERANCE:e}", report.max_rel_error);
                return Ok(EXIT_NUMERIC);
            }
            Ok(EXIT_OK)
        }
    }
}

fn settings(common: &Common, manifest: Option<&DatasetManifest>) -> Result<RunSettings> {
    let s = resolve(common, manifest)?;
    s.echo();
    Ok(s)
}

fn settings_with_mode(common: &Common, manifest: &DatasetManifest, mode: Option<&str>) -> Result<RunSettings> {
    let mut s = resolve(common, Some(manifest))?;
    if let Some(mode) = mode {
        s.train.mode = mode.parse()?;
    }
    s.echo();
    Ok(s)
}

fn initial_params(s: &RunSettings, init_from: Option<&Path>) -> Result<Parameters> {
    let Some(path) = init_from else {
        return Parameters::init(&s.model, s.train.seed);
    };
    let (params, config) = load_checkpoint(path)?;
    if config.channels == 1 && s.model.channels == 2 {
        transfer_pretrained(&params, &config, &s.model, s.train.seed)
    } else if config == s.model {
        Ok(params)
    } else {
        Err(Error::Config(format!(
            "checkpoint {} does not match the training configuration",
            path.display()
        )))
    }
}

fn train_logged(
    samples: &[VideoSample],
    init: &Parameters,
    config: &ModelConfig,
    train: &TrainConfig,
    log: &mut dyn Write,
) -> Result<Parameters> {
    writeln!(log, "{TRAIN_LOG_HEADER}")?;
    let mut io_err = None;
    let state = lsbp_train_observed(samples, init, config, train, |r| {
        if io_err.is_none() {
            io_err = writeln!(log, "{}", r.csv_line()).err();
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(it) = state.converged_at {
        eprintln!("converged at iteration {it}");
    }
    Ok(state.params)
}

fn with_log<R>(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<R>) -> Result<R> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            let r = f(&mut w)?;
            w.flush()?;
            Ok(r)
        }
        None => f(&mut io::sink()),
    }
}

fn selected<'a>(
    m: &'a DatasetManifest,
    only_fold: Option<usize>,
    exclude_fold: Option<usize>,
) -> impl Iterator<Item = &'a ManifestEntry> {
    m.entries
        .iter()
        .filter(move |e| only_fold.map_or(true, |f| e.fold == f) && exclude_fold.map_or(true, |f| e.fold != f))
}

fn load_dataset(
    path: &Path,
    only_fold: Option<usize>,
    exclude_fold: Option<usize>,
) -> Result<(DatasetManifest, Vec<VideoSample>)> {
    let m = DatasetManifest::load(path)?;
    let entries: Vec<&ManifestEntry> = selected(&m, only_fold, exclude_fold).collect();
    if entries.is_empty() {
        return Err(Error::arg(format!("{}: no samples selected", path.display())));
    }
    let samples = entries
        .par_iter()
        .map(|e| {
            let file = m.resolve(path, e);
            let s = read_sample(&file)?;
            if s.label != e.label {
                return Err(Error::format(
                    0,
                    format!("{}: label {} but manifest says {}", file.display(), s.label, e.label),
                ));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}

fn check_compatible(samples: &[VideoSample], config: &ModelConfig) -> Result<()> {
    let want = [config.channels, config.anchors, config.frame_h, config.frame_w];
    for s in samples {
        if s.frames.shape() != want {
            return Err(Error::dim(format!(
                "sample shape {:?} does not match the model's {:?}",
                s.frames.shape(),
                want
            )));
        }
    }
    Ok(())
}

fn gray_only(s: &VideoSample) -> Result<VideoSample> {
    let mut shape = s.frames.shape().to_vec();
    shape[0] = 1;
    let plane = s.frames.outer_slice(0)?.to_vec();
    VideoSample::new(Tensor::new(shape, plane)?, s.label, s.subject_id)
}

/// `path,predicted_label,probability,s1,t1,...,sM,tM`
pub(crate) fn write_predictions(
    out: &mut dyn Write,
    entries: &[&ManifestEntry],
    preds: &[Inference],
    cliques: usize,
) -> Result<()> {
    let mut header = String::from("path,predicted_label,probability");
    for i in 1..=cliques {
        header.push_str(&format!(",s{i},t{i}"));
    }
    writeln!(out, "{header}")?;
    for (e, p) in entries.iter().zip(preds) {
        writeln!(out, "{},{},{},{}", e.path, p.label, p.probability, p.latent.to_csv_fields())?;
    }
    Ok(())
}

fn preprocess(input: &Path, output: &Path, common: &Common) -> Result<i32> {
    let s = settings(common, None)?;
    let mut rd = csv::Reader::from_path(input).map_err(|e| Error::format(0, e.to_string()))?;
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| Error::format(0, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["dir", "label", "subject"] {
        return Err(Error::format(0, "video list header must be `dir,label,subject`"));
    }
    let base = input.parent().unwrap_or(Path::new("."));
    let mut rows = vec![];
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::format(0, e.to_string()))?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let bad = |what: &str| Error::format(offset, format!("bad {what}"));
        let label: usize = rec.get(1).unwrap_or("").trim().parse().map_err(|_| bad("label"))?;
        let subject: u16 = rec.get(2).unwrap_or("").trim().parse().map_err(|_| bad("subject"))?;
        rows.push((base.join(rec.get(0).unwrap_or("").trim()), label, subject));
    }
    fs::create_dir_all(output)?;
    let model = &s.model;
    let entries = rows
        .par_iter()
        .enumerate()
        .map(|(i, (dir, label, subject))| {
            let raw = ingest_video_dir(dir)?;
            let frames = preprocess_video(&raw, model.frame_h, model.frame_w, model.anchors)?;
            let sample = VideoSample::new(frames, *label, *subject)?;
            let name = format!("sample_{i:05}.rgbd");
            write_sample(&sample, output.join(&name))?;
            Ok((
                ManifestEntry {
                    path: name,
                    label: *label,
                    subject: *subject,
                    fold: 0,
                },
                sample.channels(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let channels = entries.iter().map(|e| e.1).max().unwrap_or(0);
    if entries.iter().any(|e| e.1 != channels) {
        return Err(Error::format(0, "videos mix gray-only and gray+depth input"));
    }
    let entries: Vec<ManifestEntry> = entries.into_iter().map(|e| e.0).collect();
    let classes = entries.iter().map(|e| e.label).max().unwrap_or(0);
    let manifest = DatasetManifest {
        entries,
        class_names: (1..=classes).map(|c| format!("activity{c}")).collect(),
        anchors: model.anchors,
        frame_h: model.frame_h,
        frame_w: model.frame_w,
        channels,
    };
    manifest.save(output.join("manifest.csv"))?;
    Ok(EXIT_OK)
}

fn synth(cfg: &SynthConfig, folds: usize, seed: u64, output: &Path) -> Result<i32> {
    let data = synth_generate(cfg)?;
    fs::create_dir_all(output)?;
    let manifest = if folds > 0 {
        fold_split(&data.manifest, folds, seed)?
    } else {
        data.manifest.clone()
    };
    data.samples
        .par_iter()
        .zip(&manifest.entries)
        .map(|(s, e)| write_sample(s, output.join(&e.path)))
        .collect::<Result<Vec<_>>>()?;
    manifest.save(output.join("manifest.csv"))?;
    let mut truth = BufWriter::new(File::create(output.join("truth.csv"))?);
    let mut header = String::from("path");
    for i in 1..=cfg.cliques {
        header.push_str(&format!(",s{i},t{i}"));
    }
    writeln!(truth, "{header}")?;
    for (e, h) in manifest.entries.iter().zip(&data.truth) {
        writeln!(truth, "{},{}", e.path, h.to_csv_fields())?;
    }
    truth.flush()?;
    Ok(EXIT_OK)
}

pub(crate) struct FoldResult {
    pub fold: usize,
    pub correct: usize,
    pub total: usize,
}

fn eval(manifest_path: &Path, output_dir: &Path, folds: usize, common: &Common) -> Result<i32> {
    let mut m = DatasetManifest::load(manifest_path)?;
    if m.folds() == 0 || m.entries.iter().any(|e| e.fold == 0) {
        m = fold_split(&m, folds, common.seed.unwrap_or(0))?;
    }
    let s = settings(common, Some(&m))?;
    s.model.validate()?;
    let all = m
        .entries
        .par_iter()
        .map(|e| read_sample(m.resolve(manifest_path, e)))
        .collect::<Result<Vec<_>>>()?;
    let k = s.model.classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut per_fold = vec![];
    fs::create_dir_all(output_dir)?;
    for fold in 1..=m.folds() {
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..all.len()).partition(|&i| m.entries[i].fold == fold);
        if test_idx.is_empty() || train_idx.is_empty() {
            continue;
        }
        let train: Vec<VideoSample> = train_idx.iter().map(|&i| all[i].clone()).collect();
        let test: Vec<VideoSample> = test_idx.iter().map(|&i| all[i].clone()).collect();
        let init = Parameters::init(&s.model, s.train.seed)?;
        let mut log = BufWriter::new(File::create(output_dir.join(format!("fold{fold}_train.csv")))?);
        let params = train_logged(&train, &init, &s.model, &s.train, &mut log)?;
        log.flush()?;
        let preds = infer_all(&test, &params, &s.model)?;
        let entries: Vec<&ManifestEntry> = test_idx.iter().map(|&i| &m.entries[i]).collect();
        let mut out = BufWriter::new(File::create(output_dir.join(format!("fold{fold}_predictions.csv")))?);
        write_predictions(&mut out, &entries, &preds, s.model.cliques)?;
        out.flush()?;
        let mut correct = 0;
        for (x, p) in test.iter().zip(&preds) {
            confusion[x.label - 1][p.label - 1] += 1;
            correct += usize::from(x.label == p.label);
        }
        eprintln!("fold {fold}: {correct}/{} correct", test.len());
        per_fold.push(FoldResult {
            fold,
            correct,
            total: test.len(),
        });
    }
    if per_fold.is_empty() {
        return Err(Error::arg("no fold has both training and test samples"));
    }
    let names: Vec<String> = (0..k)
        .map(|c| m.class_names.get(c).cloned().unwrap_or_else(|| format!("class{}", c + 1)))
        .collect();
    let report = eval_report(&names, &confusion, &per_fold);
    fs::write(output_dir.join("accuracy.csv"), &report.accuracy_csv)?;
    fs::write(output_dir.join("confusion.csv"), &report.confusion_csv)?;
    print!("{}", report.accuracy_csv);
    eprintln!("mean accuracy over {} folds: {:.4}", per_fold.len(), report.mean_fold_accuracy);
    Ok(EXIT_OK)
}

pub(crate) struct EvalReport {
    pub accuracy_csv: String,
    pub confusion_csv: String,
    pub mean_fold_accuracy: f64,
}

/// Per-class accuracy table, per-fold accuracies with their mean, and the
/// confusion matrix (rows true class, columns prediction).
pub(crate) fn eval_report(names: &[String], confusion: &[Vec<usize>], folds: &[FoldResult]) -> EvalReport {
    let mut acc = String::from("class,name,correct,total,accuracy\n");
    for (c, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        let ratio = if total == 0 { 0.0 } else { row[c] as f64 / total as f64 };
        acc.push_str(&format!("{},{},{},{},{:.4}\n", c + 1, names[c], row[c], total, ratio));
    }
    let mut sum = 0.0;
    for f in folds {
        let a = f.correct as f64 / f.total as f64;
        sum += a;
        acc.push_str(&format!("fold{},,{},{},{:.4}\n", f.fold, f.correct, f.total, a));
    }
    let mean = sum / folds.len() as f64;
    acc.push_str(&format!("mean,,,,{mean:.4}\n"));
    let mut conf = String::from("true\\pred");
    for n in names {
        conf.push(',');
        conf.push_str(n);
    }
    conf.push('\n');
    for (c, row) in confusion.iter().enumerate() {
        conf.push_str(&names[c]);
        for v in row {
            conf.push_str(&format!(",{v}"));
        }
        conf.push('\n');
    }
    EvalReport {
        accuracy_csv: acc,
        confusion_csv: conf,
        mean_fold_accuracy: mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_is_over_folds_not_samples() {
        let folds = [
            FoldResult { fold: 1, correct: 1, total: 1 },
            FoldResult { fold: 2, correct: 0, total: 3 },
        ];
        let conf = vec![vec![1, 1], vec![2, 0]];
        let r = eval_report(&["a".into(), "b".into()], &conf, &folds);
        assert_eq!(r.mean_fold_accuracy, 0.5);
        assert!(r.accuracy_csv.ends_with("mean,,,,0.5000\n"));
        assert_eq!(r.confusion_csv, "true\\pred,a,b\na,1,1\nb,2,0\n");
    }
}
