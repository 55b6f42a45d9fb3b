//! Command-line front end.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;

use crate::config::Config;
use crate::error::LabError;
use crate::experiments;
use crate::report::{emit_report, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Empirical and limit Gram matrices on a point sample.
    Kernel,
    /// Spectral surrogate, decay fits and a source-condition target.
    Spectrum,
    /// One gradient descent run.
    Train,
    /// Error-decomposition terms against the width.
    Coupling,
    /// Excess risk at the stopping time against the sample size.
    Rates,
    /// Parameter movement against the horizon.
    Weights,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Spectrum => "spectrum",
            Command::Train => "train",
            Command::Coupling => "coupling",
            Command::Rates => "rates",
            Command::Weights => "weights",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "ntk-lab", version, about = "Experiments with wide two-layer networks in the kernel regime")]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration; defaults apply to every missing key.
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, short = 'o', global = true, default_value = "out")]
    pub output_dir: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, overriding the configuration.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Dotted-path override such as `rates.reps=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

impl CliConfig {
    /// The effective configuration: file, then overrides, then flags.
    pub fn resolve(&self) -> Result<Config, LabError> {
        let base = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if cfg.threads == 0 {
            return Err(LabError::Config {
                key: "threads".into(),
                reason: "need at least one thread".into(),
            });
        }
        Ok(cfg)
    }
}

pub fn execute(command: Command, cfg: &Config) -> Result<RunReport, LabError> {
    match command {
        Command::Kernel => experiments::kernel_run(cfg),
        Command::Spectrum => experiments::spectrum_run(cfg),
        Command::Train => experiments::train_run(cfg),
        Command::Coupling => experiments::coupling_sweep(cfg),
        Command::Rates => experiments::rate_sweep(cfg),
        Command::Weights => experiments::weight_sweep(cfg),
    }
}

/// Runs one subcommand and returns the process exit status.
pub fn run(cli: &CliConfig) -> i32 {
    match try_run(cli) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn try_run(cli: &CliConfig) -> Result<String, LabError> {
    let cfg = cli.resolve()?;
    info!("{} with config hash {}", cli.command.name(), cfg.hash());
    let report = execute(cli.command, &cfg)?;
    let paths = emit_report(&report, &cli.output_dir)?;
    let main = paths.first().map(|p| p.display().to_string()).unwrap_or_default();
    Ok(format!("{} -> {main}", report.summary()))
}
