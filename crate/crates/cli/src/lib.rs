//! Command-line front end for weighted-ensemble experiments.
//!
//! Subcommands `coarse`, `run`, `diagnose` and `hill` read a flat
//! `key = value` configuration (see [`config`]), apply flag overrides and
//! write CSV files whose first line records the configuration hash.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig, RawConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "we", version, about = "Weighted-ensemble sampling for finite Markov chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the coarse model and write P, u, μ and v.
    Coarse,
    /// Run the configured modes over every horizon.
    Run,
    /// Check unbiasedness and the Doob identity; exits 3 if a check fails.
    Diagnose,
    /// Mean first-passage time and hitting probabilities from stationary estimates.
    Hill,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replicate count for the selected subcommand.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// Loads the configuration file and applies flag overrides.
pub fn load_config(command: &Command, args: &CommonArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    if let Some(seed) = args.seed {
        raw.set("seed", seed.to_string());
    }
    if let Some(out) = &args.out {
        raw.set("out", out.display().to_string());
    }
    if let Some(reps) = args.reps {
        let keys: &[&str] = match command {
            Command::Diagnose => &["diagnose.reps"],
            Command::Hill => &["hill.reps"],
            Command::Coarse | Command::Run => &["reps", "reps.adaptive", "reps.traditional", "reps.naive"],
        };
        for key in keys {
            raw.set(key, reps.to_string());
        }
    }
    ExperimentConfig::from_raw(raw)
}

/// Runs a subcommand and returns its exit code.
pub fn execute(cli: &Cli) -> Result<i32> {
    if let Some(t) = cli.common.threads {
        if t == 0 {
            return Err(ConfigError("--threads must be positive".into()).into());
        }
        // A pool may already exist when called from tests; that pool is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let cfg = load_config(&cli.command, &cli.common)?;
    let files = match cli.command {
        Command::Coarse => commands::cmd_coarse(&cfg)?,
        Command::Run => commands::cmd_run(&cfg)?,
        Command::Hill => commands::cmd_hill(&cfg)?,
        Command::Diagnose => {
            let (file, failed) = commands::cmd_diagnose(&cfg)?;
            log::info!("wrote {}", file.display());
            return Ok(if failed == 0 { EXIT_OK } else { EXIT_CHECK_FAILED });
        }
    };
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(EXIT_OK)
}

/// Exit code for an error: 1 for configuration problems, 2 for numerical
/// failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        EXIT_CONFIG
    } else if err.chain().any(|e| e.is::<we_core::Error>()) {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}
