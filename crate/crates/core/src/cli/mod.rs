//! Command-line front end.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data/format
//! error, 3 numeric failure. Diagnostics go to stderr.

mod commands;
mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use settings::{parse_settings, RunSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "stcnn", version, about = "Spatio-temporal CNN with latent temporal segmentation")]
pub struct Cli {
    /// Cap on worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand that builds a model.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one configuration key; repeatable and applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn raw frame directories into sample containers.
    Preprocess {
        /// CSV with header `dir,label,subject`; dirs are relative to it.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 4)]
        subjects: u16,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Use the even split for every sample instead of random boundaries.
        #[arg(long)]
        fixed_boundaries: bool,
        /// All classes share motifs and differ only in their order.
        #[arg(long)]
        shared_motifs: bool,
        /// Assign subject-wise folds (0 leaves folds unassigned).
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train a single-channel model on the gray plane with a fixed even split.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Start from a checkpoint; single-channel ones are transferred.
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// lsbp, fixed_even or pretrain_2d.
        #[arg(long)]
        mode: Option<String>,
        /// Leave this fold out of training.
        #[arg(long)]
        exclude_fold: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict label, probability and segmentation per sample.
    Infer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Only samples of this fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Subject-wise cross validation: train and test once per fold.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        /// Re-split into this many folds when the manifest has none.
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status.
pub fn dispatch<S: AsRef<str>>(argv: &[S]) -> i32 {
    let cli = match Cli::try_parse_from(argv.iter().map(|s| s.as_ref())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::run(cli.command)),
            Err(e) => Err(Error::Config(format!("cannot build thread pool: {e}"))),
        },
        None => commands::run(cli.command),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
