//! `syngrpo`: run the generation server, train, build datasets, evaluate
//! checkpoints and render reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod dataset;
mod eval;
mod report;
mod serve;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "syngrpo", version, about = "GRPO with diversity rewards and online scene replacement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the scene generation HTTP API until terminated.
    Serve(serve::ServeArgs),
    /// Train a policy and write a run directory.
    Train(train::TrainArgs),
    /// Sample train/eval/hard scene files and write a manifest.
    Dataset(dataset::DatasetArgs),
    /// Evaluate a checkpoint on a dataset manifest; prints JSON.
    Eval(eval::EvalArgs),
    /// Write CSV tables and SVG charts from run directories.
    Report(report::ReportArgs),
}

/// Failure classes, mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Serve(a) => serve::run(a),
        Command::Train(a) => train::run(a),
        Command::Dataset(a) => dataset::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Report(a) => report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
