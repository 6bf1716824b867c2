//! `wae`: train, evaluate, inspect and benchmark the wavelet-like
//! auto-encoder pipeline and its baselines.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wae_core::Error;

#[derive(Parser, Debug)]
#[command(name = "wae", version, about = "Wavelet-like auto-encoder CNN toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Config override, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory for every artifact the command writes.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Seed for initialisation, shuffling, augmentation and synthetic data.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// `f64-check` runs the gradient suite at 64-bit before the command.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64Check,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stage 1: train the auto-encoder on the transform loss.
    TrainWae {
        /// Continue from this checkpoint instead of a fresh initialisation.
        #[arg(long, value_name = "PATH")]
        from: Option<PathBuf>,
    },
    /// Stage 2: train the classifier on a frozen stage-1 auto-encoder.
    TrainCls {
        /// Stage-1 checkpoint [default: OUT/stage1.ckpt].
        #[arg(long, value_name = "PATH")]
        from: Option<PathBuf>,
    },
    /// Stage 3: fine-tune everything on the joint loss.
    Finetune {
        /// Stage-2 checkpoint [default: OUT/stage2.ckpt].
        #[arg(long, value_name = "PATH")]
        from: Option<PathBuf>,
    },
    /// Top-1/top-5 error on the test split, optionally under Gaussian noise.
    Eval {
        /// Checkpoint [default: the latest of OUT/stage3.ckpt, OUT/stage2.ckpt].
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Noise variances to evaluate (comma-separated or repeated).
        #[arg(long, value_delimiter = ',', value_name = "V")]
        noise_variance: Vec<f64>,
        /// Noise draws averaged per variance.
        #[arg(long, default_value_t = 1, value_name = "N")]
        noise_seeds: u64,
        /// Score vector to rank.
        #[arg(long, value_enum, default_value_t = View::Fused)]
        view: View,
    },
    /// Write I_L, I_H (offset-mapped) and the reconstruction of one image.
    Decompose {
        /// Checkpoint with an auto-encoder [default: the latest in OUT].
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Test-split image to decompose.
        #[arg(long, default_value_t = 0, value_name = "I")]
        index: usize,
        /// Decompose this PPM/PGM file instead of a dataset image.
        #[arg(long, value_name = "PATH", conflicts_with = "index")]
        image: Option<PathBuf>,
    },
    /// Per-layer multiply-accumulate report.
    Flops {
        /// vgg16 or a pipeline kind (wae|wavelet|decomposition|lowres|fullres).
        #[arg(long, default_value = "vgg16")]
        model: String,
        /// Input side [default: 224 for vgg16, the config crop otherwise].
        #[arg(long, value_name = "PX")]
        size: Option<usize>,
        /// Count a `layer,kind,n_in,n_out,s,m` table instead of a built-in model.
        #[arg(long, value_name = "PATH", conflicts_with = "model")]
        table: Option<PathBuf>,
        /// Count a multiply-add as two operations.
        #[arg(long)]
        mul_add: bool,
    },
    /// Single-image forward latency of pipelines.
    Bench {
        /// Pipeline kinds to time (comma-separated or repeated).
        #[arg(long, value_delimiter = ',', default_value = "wae,fullres")]
        kind: Vec<String>,
        /// Input side.
        #[arg(long, default_value_t = 32, value_name = "PX")]
        size: usize,
        #[arg(long, default_value_t = 21)]
        reps: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
    },
    /// Stage-2 training of a reference pipeline.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum View {
    Fused,
    Low,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Wavelet,
    Decomposition,
    Lowres,
    Fullres,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingPrerequisite { .. } => 3,
        Error::NonFinite { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("wae: error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
