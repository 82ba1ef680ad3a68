//! `mammofem`: labeled breast volume to compressed label map and overlap
//! metrics.
//!
//! Exit codes: 0 success, 1 internal or I/O error, 2 configuration or usage
//! error, 3 a solver failed.

mod commands;
mod config;
mod manifest;
mod pipeline;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;

/// Marks an error as the caller's fault (bad config, flags or input files).
#[derive(Debug)]
pub struct UsageError(anyhow::Error);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.into()))
}

#[derive(Debug, Parser)]
#[command(name = "mammofem", version, about = "Breast compression FEA from labeled volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic phantom label volume and its breast mask.
    Phantom(commands::PhantomArgs),
    /// Mask, resample and mesh a label volume.
    Mesh(commands::MeshArgs),
    /// Compress a VTK mesh between plates.
    Simulate(commands::SimulateArgs),
    /// Turn a (deformed) mesh back into a label volume.
    Rasterize(commands::RasterizeArgs),
    /// Dice and breast-volume change between two label maps.
    Metrics(commands::MetricsArgs),
    /// Weighted softmax ensemble of probability volumes.
    Ensemble(commands::EnsembleArgs),
    /// Run every stage from a config file.
    Pipeline(Overrides),
    /// Per-case table with Mean ± SD rows from metrics files.
    Compare(commands::CompareArgs),
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Phantom(a) => commands::phantom(&a),
        Command::Mesh(a) => commands::mesh(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Rasterize(a) => commands::rasterize(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Ensemble(a) => commands::ensemble(&a),
        Command::Pipeline(o) => {
            let cfg = PipelineConfig::from_overrides(&o).map_err(usage)?;
            pipeline::run_pipeline(&cfg)
        }
        Command::Compare(a) => commands::compare(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { EXIT_USAGE } else { 1 } as u8)
        }
    }
}
