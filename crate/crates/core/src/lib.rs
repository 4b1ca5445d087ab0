//! Two-stage GNSS-inertial initialization on manifolds.

pub mod manifold;
pub mod preintegration;
pub mod residuals;
pub mod solver;
pub mod observability;
pub mod simulation;
pub mod trigger;
pub mod dataset_io;
pub mod cli;

use thiserror::Error;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Manifold(#[from] manifold::ManifoldError),
    #[error(transparent)]
    Preintegration(#[from] preintegration::PreintegrationError),
    #[error(transparent)]
    Residual(#[from] residuals::ResidualError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Observability(#[from] observability::ObservabilityError),
    #[error(transparent)]
    Trigger(#[from] trigger::TriggerError),
    #[error(transparent)]
    Pipeline(#[from] trigger::PipelineError),
    #[error(transparent)]
    Simulation(#[from] simulation::SimulationError),
    #[error(transparent)]
    Dataset(#[from] dataset_io::DatasetError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
