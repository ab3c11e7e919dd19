//! The `graphfuse` command line: data preparation, dialect expansion,
//! graph building, training, evaluation and gradient verification.
//!
//! Exit codes: 0 ok, 1 usage or configuration, 2 bad input data,
//! 3 runtime failure (including any failed translation record).

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use graphfuse::Error;

pub mod commands;
pub mod config;

pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "graphfuse", version, about = "Graph and text fusion for multi-dialect Arabic commonsense validation")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split sentence pairs into labeled samples, normalize and deduplicate.
    Prepare {
        #[arg(required = true)]
        pairs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate MSA samples into the regional dialects through a chat endpoint.
    Expand {
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to log one record per request [default: <out>.records.jsonl].
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Draw a per-dialect review sheet of translations.
    Spotcheck {
        #[arg(required = true)]
        samples: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Rows per dialect.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Dump the co-occurrence graph of every sample.
    BuildGraphs {
        #[arg(required = true)]
        samples: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split the data, train and write checkpoints and the loss history.
    Train {
        #[arg(required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on a sample set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference check of every op and of the fused model.
    Gradcheck {
        /// Number of consecutive seeds, starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Summarize an evaluation report or sample files.
    Report {
        #[arg(long, conflicts_with = "samples")]
        eval: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        samples: Vec<PathBuf>,
    },
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Parse { .. }
        | Error::DuplicateId(_)
        | Error::Stratify(_)
        | Error::LabelOutOfRange { .. }
        | Error::InvalidArgument(_)
        | Error::EmptyGraph
        | Error::NoTokens
        | Error::MissingEmbedding(_)
        | Error::Checkpoint(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
        Error::Shape { .. }
        | Error::NonFinite(_)
        | Error::MissingGradient(_)
        | Error::Endpoint(_) => 3,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(exit_code(&e), e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
