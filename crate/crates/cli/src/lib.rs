//! Command-line front end for the `lrmc` experiments.
//!
//! Exit codes: 0 on success, 1 when an experiment fails or a file cannot be
//! read or written, 2 on usage errors.

use std::fmt;
use std::process::ExitCode;

pub mod args;
pub mod commands;
pub mod plot;

pub use args::{parse_args, Invocation, PlotKind, Task};
pub use commands::dispatch;

#[derive(Debug)]
pub enum CliError {
    /// Malformed flags or config; exit 2.
    Usage(String),
    /// Parse failure reported by clap, including help and version requests.
    Clap(clap::Error),
    /// The experiment ran but failed, or I/O went wrong; exit 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Clap(e) => e.exit_code() as u8,
            Self::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(msg) => write!(f, "error: {msg}"),
            Self::Clap(e) => write!(f, "{}", e.render()),
            Self::Failure(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lrmc::Error> for CliError {
    fn from(e: lrmc::Error) -> Self {
        Self::Failure(e.to_string())
    }
}

/// Parses, runs and maps the outcome to an exit code.
pub fn main_with<I, T>(argv: I, env_seed: Option<&str>) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let invocation = match parse_args(argv, env_seed) {
        Ok(inv) => inv,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(invocation.verbosity)
        .parse_default_env()
        .try_init();
    match dispatch(&invocation.task) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
