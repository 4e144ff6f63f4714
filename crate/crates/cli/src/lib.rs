//! Command-line front end: `simulate`, `fit` and `summarize`.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors (including
//! missing inputs and dimension mismatches), 3 for numerical failures,
//! 1 for anything else (e.g. an unwritable output directory).

pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Numerical,
    Other,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Numerical, message: message.into() }
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Other, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Other => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fieldnet::Error> for CliError {
    fn from(e: fieldnet::Error) -> Self {
        let kind = match &e {
            e if e.is_numerical() => ErrorKind::Numerical,
            fieldnet::Error::Io(_) => ErrorKind::Other,
            _ => ErrorKind::Usage,
        };
        Self { kind, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fieldnet", version, about = "Simulate and fit sparse delay-field models on a 2-D grid")]
pub struct Cli {
    /// Worker threads for parallel paths and simulations.
    #[arg(long, global = true, env = "FIELDNET_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a trajectory from the ground truth in the config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory [default: io.out, then "out"].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the λ path (and optionally the precision-weighted refit).
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Data file [default: io.data, then <out>/data.dta].
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Path index for the covariance step [default: solver.lambda_index, then the midpoint].
        #[arg(long)]
        lambda_index: Option<usize>,
    },
    /// Summary tables of one fitted λ.
    Summarize {
        #[arg(long)]
        config: PathBuf,
        /// Fit directory [default: io.out, then "out"].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory [default: <fit directory>/summary].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Path index to summarize [default: solver.lambda_index, then the midpoint].
        #[arg(long)]
        lambda_index: Option<usize>,
    },
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = config::load(&config)?;
            commands::simulate(&cfg, out.as_deref())
        }
        Command::Fit { config, data, out, lambda_index } => {
            let cfg = config::load(&config)?;
            commands::fit(&cfg, data.as_deref(), out.as_deref(), lambda_index)
        }
        Command::Summarize { config, data, out, lambda_index } => {
            let cfg = config::load(&config)?;
            commands::summarize(&cfg, data.as_deref(), out.as_deref(), lambda_index)
        }
    }
}
