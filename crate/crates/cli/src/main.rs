//! `padnet`: train, run and evaluate the stereo quality predictor from the
//! command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use padnet_core::Error;

#[derive(Parser, Debug)]
#[command(name = "padnet", version, about = "Blind stereoscopic image quality prediction")]
struct Cli {
    /// Seed for weight init, shuffling, augmentation and synthesis.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Patch resolution profile.
    #[arg(long, global = true, default_value = "256", value_parser = ["256", "64"])]
    profile: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Schedule epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Optimizer steps per schedule epoch (default: one pass over the patches).
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    stride_w: Option<usize>,
    #[arg(long)]
    stride_h: Option<usize>,
    #[arg(long)]
    no_crop: bool,
    #[arg(long)]
    no_hflip: bool,
    #[arg(long)]
    no_vflip: bool,
    /// Backbone: resnet18 or resnet34.
    #[arg(long, default_value = "resnet18")]
    backbone: String,
    /// Write the per-step trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output weights file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Horizontal patch stride (default 192, or 48 with --profile 64).
    #[arg(long)]
    stride_w: Option<usize>,
    /// Vertical patch stride (default 104, or 26 with --profile 64).
    #[arg(long)]
    stride_h: Option<usize>,
    #[arg(long, default_value = "resnet18")]
    backbone: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stage 1: encoder-decoder pretraining on single images.
    PretrainAe {
        /// Manifest whose images (both views of stereo rows) are used.
        #[arg(long, conflicts_with = "images", required_unless_present = "images")]
        manifest: Option<PathBuf>,
        /// Directory of PPM/PGM images.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Base learning rate.
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Stage 2: regressor pretraining on the 2d rows of a manifest.
    #[command(name = "pretrain-2d")]
    Pretrain2d {
        #[arg(long)]
        manifest: PathBuf,
        /// Start from these weights (every tensor they contain is loaded).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Stage 3: joint training on the 3d rows of a manifest.
    TrainJoint {
        #[arg(long)]
        manifest: PathBuf,
        /// Weights providing the encoder-decoder (`enc.`, `dec.`).
        #[arg(long)]
        ae_weights: Option<PathBuf>,
        /// Weights providing the regressor (`reg.`).
        #[arg(long)]
        reg_weights: Option<PathBuf>,
        /// Start groups without supplied weights from random init.
        #[arg(long)]
        allow_random: bool,
        #[arg(long, default_value_t = 1e-5)]
        alpha1: f64,
        #[arg(long, default_value_t = 1e-3)]
        alpha3: f64,
        /// Train on this fraction of the samples and report the held-out rest.
        #[arg(long)]
        split: Option<f64>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score one stereo pair.
    Predict {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
    },
    /// Score the 3d rows of a manifest and report agreement statistics.
    Evaluate {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Add the pair-classification analysis (needs observer scores).
        #[arg(long)]
        krasula: bool,
    },
    /// Write the rivalry maps of a stereo pair as PGM images.
    ExportMaps {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scaling of the normalized maps; raw maps always use minmax.
        #[arg(long, default_value = "unit", value_parser = ["unit", "minmax"])]
        mode: String,
        #[arg(long, default_value = "resnet18")]
        backbone: String,
    },
    /// Generate a distorted stereo dataset with pseudo-MOS labels.
    SynthData {
        /// Directory of reference pairs named NAME_left.ppm / NAME_right.ppm.
        #[arg(long, conflicts_with = "procedural", required_unless_present = "procedural")]
        refs: Option<PathBuf>,
        /// Generate this many procedural reference pairs instead.
        #[arg(long)]
        procedural: Option<usize>,
        /// Size of procedural references.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        /// Keep at most this many asymmetric variants per reference and distortion.
        #[arg(long)]
        max_asymmetric: Option<usize>,
        /// Simulated observer ratings per pair.
        #[arg(long, default_value_t = 8)]
        observers: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 1,
        Error::Format(_) | Error::Io { .. } | Error::Dimension(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
