//! Command-line front end: dataset generation, estimation, training,
//! evaluation and convergence traces.

pub mod args;
pub mod error;
pub mod estimate;
pub mod generate;
pub mod manifest;
pub mod trace;
pub mod train;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult, ErrorKind};

/// Widest clause turned into a factor when reading DIMACS files.
pub const DEFAULT_MAX_ARITY: usize = 5;

/// Worker-count cap for batch commands.
pub const THREADS_ENV: &str = "BPNN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bpnn", version, about = "Belief propagation and BPNN experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labeled dataset of factor graphs plus a manifest.
    Generate(generate::GenerateArgs),
    /// Estimate ln Z for each input graph; prints JSON records.
    Estimate(estimate::EstimateArgs),
    /// Write a freshly initialized model checkpoint.
    Init(train::InitArgs),
    /// Train a model on a manifest; writes a checkpoint and loss.csv.
    Train(train::TrainArgs),
    /// RMSE per tag and overall on a labeled manifest.
    Eval(train::EvalArgs),
    /// Per-iteration maximum message change for one graph, as CSV.
    Trace(trace::TraceArgs),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => generate::cmd_generate(&a),
        Command::Estimate(a) => estimate::cmd_estimate(&a),
        Command::Init(a) => train::cmd_init(&a),
        Command::Train(a) => train::cmd_train(&a),
        Command::Eval(a) => train::cmd_eval(&a),
        Command::Trace(a) => trace::cmd_convergence_trace(&a),
    }
}

/// Thread pool sized by `BPNN_THREADS` when set.
pub fn thread_pool() -> CliResult<rayon::ThreadPool> {
    use error::Classify;
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| error::input_error(format!("{THREADS_ENV}={v} is not a count")))?;
        b = b.num_threads(n);
    }
    b.build().internal()
}

/// Writes `text` to `path`, or stdout when there is none.
pub fn emit(path: Option<&std::path::Path>, text: &str) -> CliResult<()> {
    use error::Classify;
    use std::io::Write;
    match path {
        Some(p) => std::fs::write(p, text).input(),
        None => std::io::stdout().write_all(text.as_bytes()).internal(),
    }
}
