//! Experiment harness: theorem verification, dataset generation, behavior
//! fitting, offline training, evaluation, N-sweeps, the online loop, and
//! cross-run aggregation. Each run writes its artifacts (config copy,
//! metrics CSV, JSON summary, checkpoints) under an output directory.

mod common;
mod ops;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "emaq", version, about = "Expected-max Q-learning experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the exact operator guarantees on seeded random MDPs.
    VerifyTheorems(ops::theorems::Args),
    /// Generate an offline dataset file.
    GenData(ops::gendata::Args),
    /// Fit the autoregressive behavior model on a dataset.
    FitBehavior(ops::fitbehavior::Args),
    /// Offline ensemble training on a dataset with a frozen behavior model.
    TrainOffline(ops::train::Args),
    /// Evaluate a trained policy (or the raw behavior model) by rollouts.
    Eval(ops::eval::Args),
    /// Train and evaluate across a list of N values and seeds.
    SweepN(ops::sweep::Args),
    /// From-scratch online loop: collect, refit behavior, train, repeat.
    Online(ops::online::Args),
    /// Aggregate summary JSONs from multiple run directories.
    Summarize(ops::summarize::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::VerifyTheorems(args) => ops::theorems::run(args),
        Command::GenData(args) => ops::gendata::run(args),
        Command::FitBehavior(args) => ops::fitbehavior::run(args),
        Command::TrainOffline(args) => ops::train::run(args),
        Command::Eval(args) => ops::eval::run(args),
        Command::SweepN(args) => ops::sweep::run(args),
        Command::Online(args) => ops::online::run(args),
        Command::Summarize(args) => ops::summarize::run(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(report) => {
            eprintln!("{}", report.to_json());
            ExitCode::FAILURE
        }
    }
}
