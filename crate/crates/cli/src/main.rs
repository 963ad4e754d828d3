//! `textsimp` — command-line front end for the multi-task sentence
//! simplification toolkit: train models, decode with a trained checkpoint,
//! score outputs, and inspect scheduler traces.
//!
//! Exit codes: 0 on success, 1 on runtime failures (unreadable data, decode
//! or metric errors), 2 on usage and configuration errors (clap reports its
//! own flag errors with 2 as well).

mod decode;
mod evaluate;
mod run;
mod trace;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use textsimp_core::Error;

#[derive(Parser)]
#[command(
    name = "textsimp",
    version,
    about = "Multi-task sentence simplification: train, decode, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train task models as described by a config file
    Train(run::TrainArgs),
    /// Decode sentences with a trained checkpoint
    Decode(decode::DecodeArgs),
    /// Score decoded sentences against reference simplifications
    Evaluate(evaluate::EvaluateArgs),
    /// Summarize a scheduler trace CSV
    TraceReport(trace::TraceArgs),
}

fn code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run::cmd_train(args),
        Command::Decode(args) => decode::cmd_decode(args),
        Command::Evaluate(args) => evaluate::cmd_evaluate(args),
        Command::TraceReport(args) => trace::cmd_trace_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(code_for(&err))
        }
    }
}
