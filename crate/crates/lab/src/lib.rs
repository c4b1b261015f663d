//! Experiment runner for the chemotaxis-consumption solver.
//!
//! * [`config`]: INI-style run configuration
//! * [`presets`]: named configurations
//! * [`experiments`]: single runs, ε-sweeps, refinement studies
//! * [`verdicts`]: pass/fail checks on finished runs
//! * [`output`]: versioned CSV tables and manifests

use thiserror::Error;

pub mod config;
pub mod experiments;
pub mod output;
pub mod presets;
pub mod verdicts;

pub use config::{ConfigError, RunConfig};
pub use experiments::{eps_sweep, refinement_study, run, run_level};
pub use output::{Manifest, OutputError};
pub use verdicts::{Status, Verdict};

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Solver(#[from] chemotaxis_core::solver::SolverError),
    #[error(transparent)]
    Diagnostics(#[from] chemotaxis_core::diagnostics::DiagnosticsError),
    #[error("{0}")]
    Request(String),
}
