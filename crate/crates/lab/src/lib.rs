//! Experiment driver for the `ntk-core` library: configuration, sweeps,
//! reports and the `ntk-lab` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod report;

pub use config::Config;
pub use error::LabError;
pub use report::{emit_report, RunReport};
