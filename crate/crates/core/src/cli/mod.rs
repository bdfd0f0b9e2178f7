//! Command-line interface: `simulate`, `spectrum`, `expand`, `asymptote`,
//! `shell-demo` and `validate`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 invariant drift, 3 damped
//! configuration given to `spectrum` or `expand`, 4 missing spectrum, 5 regime
//! mismatch.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Command line.
#[derive(Debug, Parser)]
#[command(name = "acoustic-lab", version, about = "Wave equation with acoustic boundary conditions on membrane-like surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

/// Flags shared by all subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of modes (overrides `run.modes`).
    #[arg(long, global = true, value_name = "N")]
    pub modes: Option<usize>,
    /// Run the flow towards the predicted limit, up to time T or to the selected horizon.
    #[arg(long, global = true, value_name = "T", num_args = 0..=1, default_missing_value = "auto")]
    pub verify: Option<String>,
    /// Worker threads for per-mode work.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Seed for random data (overrides `run.seed`).
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,
    /// State file with the initial data (overrides `run.data`).
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Evolve initial data and log the invariants.
    Simulate,
    /// Standing-wave frequencies and profiles of an undamped configuration.
    Spectrum,
    /// Fourier coefficients of initial data in a computed spectrum.
    Expand,
    /// Predicted long-time limit of a damped configuration.
    Asymptote,
    /// Harmonic vanishing-velocity solution on a spherical shell.
    ShellDemo,
    /// Check a configuration and report its regime.
    Validate,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(String),
    Drift(String),
    Damped(String),
    MissingSpectrum(String),
    Regime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Drift(_) => 2,
            Failure::Damped(_) => 3,
            Failure::MissingSpectrum(_) => 4,
            Failure::Regime(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Drift(m) | Failure::Damped(m) | Failure::MissingSpectrum(m) | Failure::Regime(m) => m,
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Regime(_) | crate::Error::ProjectionUndefined(_) => Failure::Regime(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

/// Parses `args` and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.opts.jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            Ok(pool) => pool.install(|| commands::dispatch(cli.command, &cli.opts)),
            Err(e) => Err(Failure::Config(format!("--jobs: {e}"))),
        },
        None => commands::dispatch(cli.command, &cli.opts),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}
