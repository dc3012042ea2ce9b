//! Command-line experiment runner.
//!
//! `ddform <command> --config <path> [--out <dir>]` reads one JSON
//! experiment, runs it and writes `summary.json` plus CSV tables to
//! `<out>/<config-hash>/`.

pub mod commands;
pub mod config;
pub mod invariants;

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};

pub use commands::{run_command, CliError, Report};
pub use config::{CommandName, ConfigError, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CommandArg {
    Solve,
    Theorem1,
    Theorem2,
    Convergence,
    Fundsol,
    Invariants,
}

impl From<CommandArg> for CommandName {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Solve => CommandName::Solve,
            CommandArg::Theorem1 => CommandName::Theorem1,
            CommandArg::Theorem2 => CommandName::Theorem2,
            CommandArg::Convergence => CommandName::Convergence,
            CommandArg::Fundsol => CommandName::Fundsol,
            CommandArg::Invariants => CommandName::Invariants,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ddform", version, about = "Double-divergence solver and regularity meter")]
pub struct Args {
    #[arg(value_enum)]
    pub command: CommandArg,
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output root; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reads `DDFORM_THREADS` and sizes the global thread pool.
pub fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("DDFORM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("DDFORM_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn write_report(dir: &Path, report: &Report) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, contents) in &report.files {
        std::fs::write(dir.join(name), contents)?;
    }
    std::fs::write(dir.join("summary.json"), report.summary_json())
}

/// Runs one invocation and returns the process exit code.
pub fn run(args: &Args) -> i32 {
    let cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let requested = CommandName::from(args.command);
    if cfg.command != requested {
        eprintln!(
            "error: invalid config: file is for `{}`, invoked as `{}`",
            cfg.command.as_str(),
            requested.as_str()
        );
        return EXIT_CONFIG;
    }
    let report = match run_command(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let root = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let dir = root.join(cfg.hash());
    if let Err(e) = write_report(&dir, &report) {
        eprintln!("error: cannot write {}: {e}", dir.display());
        return EXIT_PROPERTY;
    }
    println!("{}", dir.display());
    if report.failed {
        eprintln!(
            "error: property check failed, see {}",
            dir.join("summary.json").display()
        );
        EXIT_PROPERTY
    } else {
        EXIT_OK
    }
}
