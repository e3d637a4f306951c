//! Command-line surface: config loading, the four subcommands, and
//! report/curve emission.
//!
//! Each command produces a human-readable summary plus a machine-readable
//! payload (JSON, or CSV for `sweep`). Payloads contain no timestamps or
//! thread counts, so identical configs and seeds give identical bytes.

mod commands;
mod config;
mod output;

pub use commands::{execute, CommandOutput};
pub use config::{load_config, LoadedConfig, Reference, RunConfig, Seeds, SweepBlock};
pub use output::{sweep_csv, write_atomic, CSV_HEADER};

use std::path::{Path, PathBuf};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Analyze,
    Optimize,
    Sweep,
    Montecarlo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Optimize => "optimize",
            Command::Sweep => "sweep",
            Command::Montecarlo => "montecarlo",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Options {
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub seed_override: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("PARSE_ERROR{}: {message}", fmt_position(.position))]
    Parse {
        position: Option<(usize, usize)>,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(Error),

    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
}

fn fmt_position(position: &Option<(usize, usize)>) -> String {
    match position {
        Some((line, column)) => format!(" at line {line}, column {column}"),
        None => String::new(),
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::OutOfRange { .. } | Error::MissingField(_) | Error::Degenerate(_) => CliError::Invalid(e),
            _ => CliError::Numeric(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Invalid(_) | CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Write { .. } => 3,
        }
    }
}

/// Loads `config_path`, runs `command`, writes the payload to `--out` when
/// given, and returns the text destined for stdout.
pub fn run(command: Command, config_path: &Path, options: &Options) -> Result<String, CliError> {
    let loaded = load_config(config_path)?;
    let output = execute(command, &loaded, options)?;
    let mut stdout = output.summary.clone();
    match &options.out {
        Some(path) => {
            write_atomic(path, output.payload.as_bytes())?;
            if let Some(meta) = &output.sidecar {
                write_atomic(&sidecar_path(path), meta.as_bytes())?;
            }
        }
        None => {
            stdout.push('\n');
            stdout.push_str(&output.payload);
        }
    }
    Ok(stdout)
}

/// `<out>.meta.json`, holding provenance for CSV payloads.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}
