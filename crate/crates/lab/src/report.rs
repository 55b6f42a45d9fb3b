//! Run reports and their on-disk form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ntk_core::fit::LinearFit;
use ntk_core::kernels::KernelMatrix;
use ntk_core::network::Theta;
use ntk_core::spectrum::{SourceTarget, SpectralModel};
use serde::Serialize;
use serde_json::Value;

use crate::config::Config;
use crate::error::LabError;
use crate::io::{self, Table};

/// A seed derived from the master seed, with what it was used for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRecord {
    pub purpose: &'static str,
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
}

/// A fitted log-log slope with the value it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeRecord {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
    pub reference: Option<f64>,
}

impl SlopeRecord {
    pub fn new(fit: &LinearFit, reference: Option<f64>) -> Self {
        SlopeRecord {
            slope: fit.slope,
            stderr: fit.slope_stderr,
            points: fit.points,
            reference,
        }
    }
}

/// Binary or JSON artifacts written next to the tables.
#[derive(Debug, Clone)]
pub enum Artifact {
    Kernel { name: String, matrix: KernelMatrix, seed: u64 },
    Model { name: String, model: Box<SpectralModel> },
    Target { name: String, target: SourceTarget },
    Snapshots { name: String, snapshots: Vec<(usize, Theta)> },
}

/// Everything one subcommand produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub sweep: String,
    pub config_hash: String,
    pub config: Value,
    pub master_seed: u64,
    pub seeds: Vec<SeedRecord>,
    pub metrics: BTreeMap<String, f64>,
    pub slopes: BTreeMap<String, SlopeRecord>,
    pub notes: Vec<String>,
    /// Slope or metric named in the one-line summary.
    #[serde(skip)]
    pub headline: Option<String>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    /// Main table, written as `<sweep>.csv`.
    #[serde(skip)]
    pub table: Table,
    /// Further tables, written as `<sweep>_<name>.csv`.
    #[serde(skip)]
    pub extra_tables: Vec<(String, Table)>,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunReport {
    pub fn new(sweep: &str, cfg: &Config, table: Table) -> Self {
        RunReport {
            sweep: sweep.into(),
            config_hash: cfg.hash(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            master_seed: cfg.seed,
            seeds: Vec::new(),
            metrics: BTreeMap::new(),
            slopes: BTreeMap::new(),
            notes: Vec::new(),
            headline: None,
            started_unix_s: now_unix(),
            finished_unix_s: f64::NAN,
            table,
            extra_tables: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    pub fn slope(&mut self, key: &str, fit: &LinearFit, reference: Option<f64>) {
        self.slopes.insert(key.into(), SlopeRecord::new(fit, reference));
    }

    pub fn seed(&mut self, purpose: &'static str, cell: usize, rep: usize, seed: u64) {
        self.seeds.push(SeedRecord { purpose, cell, rep, seed });
    }

    /// One line for the terminal: the headline metric.
    pub fn summary(&self) -> String {
        let slope = match &self.headline {
            Some(h) => self.slopes.get_key_value(h),
            None => self.slopes.iter().next(),
        };
        let metric = match &self.headline {
            Some(h) => self.metrics.get_key_value(h),
            None => self.metrics.iter().next(),
        };
        if let Some((k, s)) = slope {
            match s.reference {
                Some(r) => format!("{}: {k} slope {:.4} (reference {:.4})", self.sweep, s.slope, r),
                None => format!("{}: {k} slope {:.4}", self.sweep, s.slope),
            }
        } else if let Some((k, v)) = metric {
            format!("{}: {k} = {v:.6e}", self.sweep)
        } else {
            self.sweep.clone()
        }
    }
}

/// Writes `<sweep>.csv`, `<sweep>_<name>.csv` for extra tables, the binary
/// artifacts, and `<sweep>-<hash>.json` with the metadata. Returns the paths
/// in that order.
pub fn emit_report(report: &RunReport, output_dir: &Path) -> Result<Vec<PathBuf>, LabError> {
    std::fs::create_dir_all(output_dir).map_err(|e| LabError::io(output_dir, e))?;
    let mut paths = Vec::new();
    let main = output_dir.join(format!("{}.csv", report.sweep));
    report.table.write(&main)?;
    paths.push(main);
    for (name, t) in &report.extra_tables {
        let p = output_dir.join(format!("{}_{name}.csv", report.sweep));
        t.write(&p)?;
        paths.push(p);
    }
    for a in &report.artifacts {
        let p = match a {
            Artifact::Kernel { name, matrix, seed } => {
                let p = output_dir.join(format!("{name}.bin"));
                io::write_kernel(&p, matrix, *seed)?;
                p
            }
            Artifact::Model { name, model } => {
                let p = output_dir.join(format!("{name}.bin"));
                io::write_spectral_model(&p, model)?;
                p
            }
            Artifact::Target { name, target } => {
                let p = output_dir.join(format!("{name}.json"));
                io::write_target(&p, target)?;
                p
            }
            Artifact::Snapshots { name, snapshots } => {
                let p = output_dir.join(format!("{name}.bin"));
                io::write_snapshots(&p, snapshots)?;
                p
            }
        };
        paths.push(p);
    }
    let meta = output_dir.join(format!("{}-{}.json", report.sweep, report.config_hash));
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&meta, text).map_err(|e| LabError::io(&meta, e))?;
    paths.push(meta);
    Ok(paths)
}
