//! Config-driven scenario runner for the `rotkit` rigid-rotor toolkit.
//!
//! [`execute`] is the whole command-line program minus argument parsing:
//! it loads a [`config::RunConfig`], applies overrides, runs one scenario
//! and writes CSV tables, a JSON summary and a plotting manifest.

pub mod config;
pub mod output;
pub mod scenarios;

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use config::{ConfigError, RunConfig};
use output::{Provenance, Report};
use scenarios::RunError;

/// Environment variable that sizes the worker pool.
pub const THREADS_ENV: &str = "ROTKIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Spectrum,
    Align,
    Orient2c,
    Echo,
    Kicked,
    Emdiagram,
    Optimize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Align => "align",
            Command::Orient2c => "orient2c",
            Command::Echo => "echo",
            Command::Kicked => "kicked",
            Command::Emdiagram => "emdiagram",
            Command::Optimize => "optimize",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jmax: Option<u32>,
}

/// A validated configuration together with its provenance hash.
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
}

/// Parse `text`, apply overrides and validate.
pub fn load_str(text: &str, overrides: &Overrides) -> Result<Loaded, ConfigError> {
    let mut config = config::parse_unchecked(text)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(j) = overrides.jmax {
        config.basis.j_max = j;
    }
    config.validate()?;
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    if let Some(seed) = overrides.seed {
        h.update(format!("\n--seed={seed}").as_bytes());
    }
    if let Some(j) = overrides.jmax {
        h.update(format!("\n--jmax={j}").as_bytes());
    }
    let hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(Loaded { config, hash })
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
    load_str(&text, overrides)
}

/// Run one scenario without writing anything.
pub fn run_scenario(command: Command, cfg: &RunConfig) -> Result<Report, RunError> {
    match command {
        Command::Spectrum => scenarios::spectrum(cfg),
        Command::Align => scenarios::align(cfg),
        Command::Orient2c => scenarios::orient2c(cfg),
        Command::Echo => scenarios::echo(cfg),
        Command::Kicked => scenarios::kicked(cfg),
        Command::Emdiagram => scenarios::emdiagram(cfg),
        Command::Optimize => scenarios::optimize(cfg, cfg.seed),
    }
}

/// Size the worker pool from [`THREADS_ENV`] if it is set.
pub fn configure_threads() -> Result<(), ConfigError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| ConfigError::new(THREADS_ENV, format!("expected a positive integer, got `{v}`")))?;
            rotkit::exec::set_thread_count(n);
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

/// Load, run and write. Returns the written files.
pub fn execute(command: Command, config_path: &Path, overrides: &Overrides) -> Result<Vec<PathBuf>, RunError> {
    configure_threads()?;
    let loaded = load(config_path, overrides)?;
    let cfg = &loaded.config;
    let report = run_scenario(command, cfg)?;
    let dir = overrides
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let prefix = cfg.output.prefix.clone().unwrap_or_else(|| command.name().to_string());
    let prov = Provenance {
        command: command.name().to_string(),
        config_hash: loaded.hash.clone(),
        seed: cfg.seed,
    };
    Ok(output::write_report(&report, &dir, &prefix, &prov)?)
}
