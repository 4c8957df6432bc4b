use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmdetect_core::Error;

mod commands;
mod config;

/// Multimodal multi-task detector for AI-generated images.
#[derive(Debug, Parser)]
#[command(name = "mmdetect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted generator fingerprints.
    Synth(SynthArgs),
    /// Train a model; writes last.ckpt, best.ckpt and history.json.
    Train(TrainArgs),
    /// Score a labeled manifest against a checkpoint or a predictions file.
    Eval(EvalArgs),
    /// Write per-sample predictions with confidences.
    Predict(PredictArgs),
    /// Score an unlabeled manifest and keep high-confidence rows.
    PseudoLabel(PseudoLabelArgs),
    /// Split kept pseudo rows 8:2 and append them to the original splits.
    Augment(AugmentArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    id_prefix: Option<String>,
    /// Leave the label columns empty.
    #[arg(long)]
    unlabeled: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// lr 1e-3 and batch 64, for training the small model from scratch.
    Desk,
    /// lr 2e-5 and batch 256.
    Paper,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Applied after the config file and before the individual flags.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Labeled manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(
        long,
        required_unless_present = "predictions",
        conflicts_with = "predictions"
    )]
    ckpt: Option<PathBuf>,
    /// Predictions CSV in manifest order, as written by `predict`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PseudoLabelArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    ckpt: PathBuf,
    /// Unlabeled manifest.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Split seed, used when augmenting.
    #[arg(long)]
    seed: Option<u64>,
    /// Original training manifest; with --val, also writes the extended splits.
    #[arg(long, requires = "val")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    val: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// pseudo_records.csv from `pseudo-label`.
    #[arg(long)]
    pseudo: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Labeled manifest to draw batches from.
    #[arg(long)]
    manifest: PathBuf,
    /// Check this checkpoint instead of a fresh initialization.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    batches: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    /// The command finished but a numeric check failed.
    NumericFailure,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::PseudoLabel(a) => commands::pseudo_label(a),
        Command::Augment(a) => commands::augment(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NumericFailure) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
