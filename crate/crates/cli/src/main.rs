//! `hopfir` command-line tool.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
//! abort, 4 gradient check failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "hopfir", version, about = "2D-to-3D human pose lifting with hop-wise graph attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration shared by commands that build a model.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// `key = value` file with model and training keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "K=V")]
    pub set: Vec<String>,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skeleton file; defaults to the 16-joint human skeleton.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a manifest, a log and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Train in 64-bit floating point.
        #[arg(long)]
        f64: bool,
        /// Training dataset (.hfp or .csv).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluation dataset.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Train on this many synthetic samples instead of a file.
        #[arg(long, conflicts_with = "data")]
        synth: Option<usize>,
        /// Evaluate on this many fresh synthetic samples.
        #[arg(long, conflicts_with = "eval_data")]
        synth_eval: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `p1` (MPJPE only) or `all`.
        #[arg(long, default_value = "all")]
        protocol: String,
        /// Output directory for `report.json`.
        #[arg(long)]
        out: PathBuf,
        /// Expected configuration; differing keys are an error.
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Predict 3D poses for every sample of a dataset.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for `predictions.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer and the end-to-end loss.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 250)]
        coords: usize,
        /// Scale analytic gradients to prove the check catches a broken
        /// backward pass.
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Export the hop-attention matrices of one sample as CSV and PPM.
    InspectAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
        /// Pixels per matrix entry in the heat maps.
        #[arg(long, default_value_t = 16)]
        cell: usize,
    },
    /// Write a synthetic dataset.
    SynthData {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; `.csv` selects CSV, anything else the binary format.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            cfg,
            out,
            f64,
            data,
            eval_data,
            synth,
            synth_eval,
            resume,
        } => commands::train(&commands::TrainArgs {
            cfg,
            out,
            f64,
            data,
            eval_data,
            synth,
            synth_eval,
            resume,
        }),
        Command::Eval {
            checkpoint,
            data,
            protocol,
            out,
            cfg,
        } => commands::eval(&checkpoint, &data, &protocol, &out, &cfg),
        Command::Infer { checkpoint, data, out } => commands::infer(&checkpoint, &data, &out),
        Command::Gradcheck {
            cfg,
            seeds,
            coords,
            corrupt_backward,
        } => commands::gradcheck(&cfg, seeds, coords, corrupt_backward),
        Command::InspectAttention {
            checkpoint,
            data,
            sample,
            out,
            cell,
        } => commands::inspect_attention(&checkpoint, &data, sample, &out, cell),
        Command::SynthData {
            count,
            seed,
            out,
            skeleton,
        } => commands::synth_data(count, seed, &out, skeleton.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
