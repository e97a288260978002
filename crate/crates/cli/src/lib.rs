//! Batch front-end for `kalnat`: reads a flat config, runs a filter or an
//! equivalence check, and writes CSV traces plus a plain-text summary.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 comparison outside tolerance.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod scenario_io;
pub mod table;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{cmd_compare, cmd_list, cmd_run, CompareMode, RunMode, Verdict};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "kalnat", version, about = "Fading-memory EKF and trajectory natural gradient")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one filter and write trace.csv and summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: RunModeArg,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run filter and natural gradient side by side and compare them.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: CompareModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = config::parse_tol)]
        tol: Option<f64>,
        /// Deliberate breakage for negative controls.
        #[arg(long)]
        mutate: Option<String>,
    },
    /// Print the built-in scenario names.
    List,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RunModeArg {
    Ekf,
    Natgrad,
    Bucy,
    Cngd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CompareModeArg {
    Discrete,
    Continuous,
}

impl From<RunModeArg> for RunMode {
    fn from(m: RunModeArg) -> Self {
        match m {
            RunModeArg::Ekf => RunMode::Ekf,
            RunModeArg::Natgrad => RunMode::Natgrad,
            RunModeArg::Bucy => RunMode::Bucy,
            RunModeArg::Cngd => RunMode::Cngd,
        }
    }
}

impl From<CompareModeArg> for CompareMode {
    fn from(m: CompareModeArg) -> Self {
        match m {
            CompareModeArg::Discrete => CompareMode::Discrete,
            CompareModeArg::Continuous => CompareMode::Continuous,
        }
    }
}

pub fn execute(command: Command) -> CliResult<Verdict> {
    match command {
        Command::Run { config, mode, out } => cmd_run(&RunConfig::load(&config)?, mode.into(), out.as_deref()),
        Command::Compare { config, mode, out, tol, mutate } => {
            let mutate = mutate
                .map(|m| config::parse_mutation(&m).map_err(|e| CliError::config(format!("--mutate: {e}"))))
                .transpose()?;
            cmd_compare(&RunConfig::load(&config)?, mode.into(), out.as_deref(), tol, mutate)
        }
        Command::List => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(cmd_list().as_bytes())
                .map_err(|source| CliError::Io { path: PathBuf::from("<stdout>"), source })?;
            Ok(Verdict::Pass)
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(Verdict::Pass) => 0,
        Ok(Verdict::Fail) => 3,
        Err(e) => {
            eprintln!("kalnat: {e}");
            e.exit_code()
        }
    }
}
