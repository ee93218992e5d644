//! The `absa` command-line tool.
//!
//! Every command that writes results builds its output directory under a
//! temporary name next to the destination and renames it into place when
//! done, so an interrupted run never leaves a half-written directory behind.
//!
//! Exit codes: 0 on success, 1 when training or evaluation fails at run
//! time, 2 for usage and input errors.

mod args;
mod commands;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use args::RunArgs;
pub use output::Staging;

#[derive(Debug, Parser)]
#[command(name = "absa", version, about = "Aspect-level sentiment models with document-level transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train document-level models and write one checkpoint per seed.
    Pretrain(commands::PretrainArgs),
    /// Train aspect models under a regime and report test metrics.
    Train(commands::TrainArgs),
    /// Evaluate saved aspect checkpoints on a labelled corpus.
    Eval(commands::EvalArgs),
    /// Run PRET with each layer-selective transfer mask.
    Ablate(commands::AblateArgs),
    /// Run PRET+MULT over increasing fractions of the document corpus.
    Curve(commands::CurveArgs),
    /// Dump attention weights, and the samples one model fixes over another.
    Inspect(commands::InspectArgs),
    /// Write seeded synthetic corpora.
    Synth(commands::SynthArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] absa_core::Error),
    #[error("{}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(_) | CliError::Output { .. } => 1,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Curve(a) => commands::curve(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Synth(a) => commands::synth(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
