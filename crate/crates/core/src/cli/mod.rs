//! Batch front end: one subcommand per pipeline, a declarative config file,
//! JSON/CSV outputs and fixed exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | configuration or I/O error |
//! | 2 | solver failure |
//! | 3 | certificate not solvable, or path spread above tolerance |

mod commands;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "congeo",
    version,
    about = "Maximum entropy, parallel transport and Fokker–Planck stationarity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides OUTPUT_DIR and the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    pub threads: usize,
    /// Overrides `[dynamics] seed`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit multipliers to moment targets.
    Fit,
    /// Transport along the configured path and check path independence.
    Transport,
    /// Evolve the Fokker–Planck equation.
    Evolve,
    /// Run the Langevin sampler.
    Sample,
    /// Issue the stationarity certificate for the drift.
    Certify,
    /// Trace level sets of the potential.
    Contour,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Transport => "transport",
            Command::Evolve => "evolve",
            Command::Sample => "sample",
            Command::Certify => "certify",
            Command::Contour => "contour",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Solver(_) => 2,
        }
    }
}

/// What a successful command concluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Ran to completion but the result fails its acceptance test.
    Rejected,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Rejected => 3,
        }
    }
}

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Output directory: `--output`, then `OUTPUT_DIR`, then the config, then `out`.
fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(dir) = &cli.output {
        return dir.clone();
    }
    if let Some(dir) = std::env::var_os("OUTPUT_DIR").filter(|d| !d.is_empty()) {
        return dir.into();
    }
    cfg.output
        .dir
        .as_deref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(format!("writing {}", path.display())))
}

/// Loads the config, resolves defaults, echoes the effective config into
/// the output directory and runs the command.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("--config PATH is required".into()))?;
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.dynamics.seed = seed;
    }
    cfg.resolve()?;
    let dir = output_dir(cli, &cfg);
    fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
    cfg.output.dir = Some(dir.to_string_lossy().into_owned());
    write_file(&dir, "effective_config.ini", cfg.to_text().as_bytes())?;
    log::info!("{}: output in {}", cli.command.name(), dir.display());

    if cli.threads == 0 {
        return Err(ConfigError::Invalid("--threads must be at least 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Solver(format!("thread pool: {e}")))?;
    pool.install(|| commands::run(cli.command, &cfg, &dir))
}

/// Runs the CLI and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
