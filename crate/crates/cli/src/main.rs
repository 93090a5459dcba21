//! `aio`: analyze, evaluate, train on toy data, check gradients, count
//! parameters.
//!
//! Exit status is 0 on success, 1 on a usage error (and on a failed
//! gradient check), 2 on a data error.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aio", version, about = "Beat, downbeat and structure analysis of demixed music")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one track and write a result document.
    Analyze(commands::AnalyzeArgs),
    /// Score result documents against reference annotations.
    Evaluate(commands::EvaluateArgs),
    /// Train on synthetic tracks and write the weights.
    TrainToy(commands::TrainToyArgs),
    /// Compare analytic and finite-difference gradients of the network.
    Gradcheck(commands::GradcheckArgs),
    /// Print the exact parameter count of a configuration.
    Params(commands::ParamsArgs),
}

/// Why a command failed.
pub enum Failure {
    Usage(String),
    Data(String),
    /// The command ran but its check did not pass.
    Check(String),
}

impl From<aio_core::Error> for Failure {
    fn from(e: aio_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("AIO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("AIO_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size the thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let run = init_threads().and_then(|()| match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Params(a) => commands::params(a),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Check(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
