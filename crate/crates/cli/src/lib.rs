//! Command-line experiment runner: `pdra run|sweep|validate`.
//!
//! Exit codes: 0 on success, 2 for invalid input (bad config, missing files,
//! failed validation), 3 when a solve or the oracle fails.

pub mod commands;
pub mod config;
pub mod presets;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use pdra_core::PdraError;

use crate::config::{ExperimentConfig, Overrides, SolverName};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<PdraError> for CliError {
    fn from(e: PdraError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pdra", version, about = "Resilient primal-dual resource allocation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write trace, bounds and summary CSVs.
    Run(Common),
    /// Run the cross product of the config's [sweep] axes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Run sweeps larger than sweep.max_cells.
        #[arg(long)]
        allow_large: bool,
    },
    /// Check the configuration against the solver's assumptions.
    Validate(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// One of the built-in presets (see README).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverName>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub upsilon: Option<f64>,
}

impl Common {
    pub fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => presets::preset(name)?,
            (None, None) => return Err(CliError::Validation("one of --config or --preset is required".into())),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            iters: self.iters,
            out: self.out.clone(),
            solver: self.solver,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            window: self.window,
            gamma: self.gamma,
            upsilon: self.upsilon,
        });
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(c) => {
            let out = commands::cmd_run(&c.load()?)?;
            println!("config_hash={}", out.hash);
            Ok(0)
        }
        Command::Sweep { common, allow_large } => {
            let out = commands::cmd_sweep(&common.load()?, allow_large)?;
            println!("config_hash={}", out.hash);
            let failed: Vec<_> = out.cells.iter().filter(|c| c.error.is_some()).collect();
            for c in &failed {
                eprintln!("cell {} failed: {}", c.index, c.error.as_deref().unwrap_or(""));
            }
            Ok(if failed.is_empty() { 0 } else { 3 })
        }
        Command::Validate(c) => {
            let rep = commands::cmd_validate(&c.load()?)?;
            print!("{}", rep.render());
            Ok(if rep.first_failure().is_some() { 2 } else { 0 })
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
