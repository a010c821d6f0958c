//! `holonomy`: batch runner for the affine-sphere experiments.
//!
//! Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 failed check in
//! verify-all. Errors are reported on stderr as one JSON object.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use holonomy_core::Error;
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig, Mode};

#[derive(Parser, Debug)]
#[command(name = "holonomy", version, about = "Wang's equation, frame transport and holonomy experiments")]
struct Args {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the mode given in the config.
    #[arg(long)]
    mode: Option<String>,
    /// Directory for artifact files; without it the main artifact goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_failure(e: &ConfigError) -> ExitCode {
    let mut v = json!({ "error": "config", "message": e.message });
    if let (Some(l), Some(c)) = (e.line, e.column) {
        v["line"] = json!(l);
        v["column"] = json!(c);
    }
    eprintln!("{v}");
    ExitCode::from(2)
}

fn run_failure(e: &Error) -> ExitCode {
    let (kind, code) = match e {
        Error::InvalidParameter(_) | Error::Parse(_) => ("config", 2),
        Error::Io(_) => ("io", 3),
        _ => ("numerical", 3),
    };
    eprintln!("{}", json!({ "error": kind, "message": e.to_string() }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = Args::parse();

    let cfg = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match ExperimentConfig::parse(&text) {
                Ok(c) => c,
                Err(e) => return config_failure(&e),
            },
            Err(e) => return config_failure(&ConfigError::new(format!("cannot read {}: {e}", path.display()))),
        },
        None => ExperimentConfig::default(),
    };
    let mode = match args.mode.as_deref().map(str::parse::<Mode>).transpose() {
        Ok(m) => m.or(cfg.mode),
        Err(e) => return config_failure(&ConfigError::new(e)),
    };
    let Some(mode) = mode else {
        return config_failure(&ConfigError::new("no mode given (use --mode or the config's \"mode\")"));
    };

    let out = match run::run(&cfg, mode) {
        Ok(o) => o,
        Err(e) => return run_failure(&e),
    };
    let dir = args.out.as_deref().or(cfg.outputs.dir.as_deref());
    match out.write(dir) {
        Ok(text) => print!("{text}"),
        Err(e) => return run_failure(&Error::Io(e)),
    }
    if !out.failed_checks.is_empty() {
        eprintln!("{}", json!({ "error": "acceptance", "failed": out.failed_checks }));
        return ExitCode::from(4);
    }
    ExitCode::SUCCESS
}
