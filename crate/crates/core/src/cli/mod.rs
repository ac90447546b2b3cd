//! Command-line driver: configuration loading, subcommand dispatch and output.

mod commands;
mod config;

pub use commands::{
    cmd_background, cmd_oracle, cmd_sweep, cmd_transition, exit_code_for, read_init, CmdError, CmdResult, McSummary,
    OracleOutput, SpreadCheck, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_PARTIAL, TRANSITION_HEADER,
};
pub use config::{GridConfig, OracleConfig, RunConfig, SweepAxis};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "capfield",
    version,
    about = "Firm and investor field model: background, transitions, oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the self-consistent collective state.
    Background {
        #[command(flatten)]
        common: Common,
        /// Initial K_X: CSV with a `value` column, or a JSON number or array.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate transition functions for a CSV of queries.
    Transition {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        queries: PathBuf,
        /// Background bundle directory; defaults to the output directory.
        #[arg(long)]
        background: Option<PathBuf>,
    },
    /// Compare closed forms with Fokker–Planck and Monte Carlo oracles.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the background over every combination of sweep values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CAPFIELD_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let common = match &cli.command {
        Command::Background { common, .. }
        | Command::Transition { common, .. }
        | Command::Oracle { common, .. }
        | Command::Sweep { common, .. } => common,
    };
    let cfg = match RunConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_CONFIG;
        }
    };
    let out = common.out.clone().unwrap_or_else(|| cfg.output.clone());
    let result = match &cli.command {
        Command::Background { init, .. } => cmd_background(&cfg, &out, init.as_deref()),
        Command::Transition {
            queries, background, ..
        } => cmd_transition(&cfg, background.as_deref().unwrap_or(&out), queries, &out),
        Command::Oracle { background, seed, .. } => {
            cmd_oracle(&cfg, background.as_deref().unwrap_or(&out), &out, *seed)
        }
        Command::Sweep { workers, .. } => cmd_sweep(&cfg, &out, *workers),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            e.code
        }
    }
}

pub fn main() -> u8 {
    run(std::env::args_os())
}
