//! `tocloak`: run cloaking experiments from a JSON configuration.

mod commands;
mod config;
mod specs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};

use crate::commands::Outcome;
use crate::config::{parse_config, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver error: {source}")]
    Solver { source: tocloak::Error, details: Value },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<tocloak::Error> for CliError {
    fn from(source: tocloak::Error) -> Self {
        CliError::Solver { source, details: Value::Null }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_ASSERTION: u8 = 4;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LogLevel {
    Error,
    Info,
    Debug,
}

#[derive(Debug, Parser)]
#[command(name = "tocloak", version, about = "Transformation-optics cloaking experiments")]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Report path (overrides the configuration's `output`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Disable parallel mode solves.
    #[arg(long)]
    serial: bool,
    /// Seed for randomized checks (overrides the configuration's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "error")]
    log_level: LogLevel,
}

/// `<output stem>.summary.json` next to the report.
fn summary_path(output: &Path) -> PathBuf {
    output.with_extension("summary.json")
}

fn write_summary(config: &RunConfig, serial: bool, status: &str, message: &str, extra: Value) -> std::io::Result<()> {
    let determinism = if serial {
        "serial run: report bytes are reproducible for identical inputs and seed"
    } else {
        "parallel run: numeric outputs reproduce the serial path within 1e-12 (reductions are order-preserving)"
    };
    let mut summary = json!({
        "command": config.command.name(),
        "status": status,
        "message": message,
        "output": config.output_path,
        "seed": config.seed,
        "serial": serial,
        "determinism": determinism,
        "omega": config.scenario.omega,
        "m": config.scenario.m,
    });
    if let (Value::Object(s), Value::Object(e)) = (&mut summary, extra) {
        s.extend(e);
    }
    let text = serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?;
    std::fs::write(summary_path(&config.output_path), text + "\n")
}

fn execute(config: &RunConfig, serial: bool) -> Result<u8, CliError> {
    let start = Instant::now();
    let Outcome { body, rows, checks, details } = match commands::run(config, serial) {
        Ok(o) => o,
        Err(CliError::Solver { source, details }) => {
            let message = source.to_string();
            log::error!("{message}");
            write_summary(config, serial, "solver-error", &message, json!({ "details": details }))?;
            return Ok(EXIT_SOLVER);
        }
        Err(e) => return Err(e),
    };
    std::fs::write(&config.output_path, body)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let (status, message, code) = if failed.is_empty() {
        ("ok", format!("{rows} rows written"), 0)
    } else {
        ("assertion-failed", format!("failed checks: {}", failed.join("; ")), EXIT_ASSERTION)
    };
    if code != 0 {
        log::error!("{message}");
    }
    let extra = json!({
        "rows": rows,
        "checks": checks,
        "details": details,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
    });
    write_summary(config, serial, status, &message, extra)?;
    Ok(code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.log_level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let mut config = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(out) = args.output {
        config.output_path = out;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    log::info!("running {} -> {}", config.command.name(), config.output_path.display());
    match execute(&config, args.serial) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Config(_) => EXIT_CONFIG,
                _ => EXIT_SOLVER,
            })
        }
    }
}
