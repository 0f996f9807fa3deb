//! `sessrec`: batch front end for the session-aware next-destination
//! recommender. One command per process; everything is driven by flags
//! and files, never interactively.

mod commands;
mod failure;
mod manifest;
mod rundir;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sessrec",
    version,
    about = "Session-aware next-destination recommendation engine",
    after_help = "Exit codes: 0 success, 1 usage, 2 data error, 3 verification failure.\n\
                  SSE_SEED overrides the default seed of any command that takes --seed."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic booking CSV from a block-structured Markov chain
    Synth(commands::synth::SynthArgs),
    /// Train with stratified k-fold cross-validation; writes a run directory
    Train(commands::train::TrainArgs),
    /// Report recall@k of a trained run on a dataset
    Eval(commands::eval::EvalArgs),
    /// Emit top-4 next-destination recommendations per session
    Predict(commands::predict::PredictArgs),
    /// Prove the many-to-many pass equivalent to per-prefix many-to-one
    Verify(commands::verify::VerifyArgs),
    /// Measure sequential-op counts and wall time of engine vs oracle
    Bench(commands::bench::BenchArgs),
}

fn main() -> ExitCode {
    // clap exits 2 on usage errors by default, but this tool reserves 2
    // for data errors; usage problems are code 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Synth(args) => commands::synth::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Predict(args) => commands::predict::run(&args),
        Command::Verify(args) => commands::verify::run(&args),
        Command::Bench(args) => commands::bench::run(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
