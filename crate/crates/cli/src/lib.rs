//! Command-line workflows: synthesize data, train the generator and the
//! classifiers, sample gaits, evaluate and explain.

pub mod commands;
pub mod error;
pub mod manifest;

use clap::{Parser, Subcommand};

pub use commands::*;
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "stepgait",
    version,
    about = "Gait emotion classification and generation"
)]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Emit a labeled synthetic dataset as an EGT1 file.
    Synth(SynthArgs),
    /// Train the conditional gait generator.
    TrainGen(TrainGenArgs),
    /// Sample gaits from a trained generator.
    Generate(GenerateArgs),
    /// Train a classifier (baseline, step or step+aug).
    TrainClf(TrainClfArgs),
    /// Accuracy, confusion matrix and FID.
    Eval(EvalArgs),
    /// Guided-backpropagation saliency map for one gait.
    Saliency(SaliencyArgs),
    /// Test accuracy against the number of generated training gaits.
    Augcurve(AugcurveArgs),
}

pub fn run(command: &Command) -> CliResult<RunManifest> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainGen(a) => cmd_train_gen(a),
        Command::Generate(a) => cmd_generate(a),
        Command::TrainClf(a) => cmd_train_clf(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Saliency(a) => cmd_saliency(a),
        Command::Augcurve(a) => cmd_augcurve(a),
    }
}
