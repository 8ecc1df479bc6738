//! Confidence-gated model cascades that adapt a remote large model to a
//! classification task.
//!
//! Small task-specific models answer the inputs they are confident about;
//! the rest go to the large model, and what it is unsure of goes on to
//! augmented small models trained on the examples both layers get wrong.

pub mod augment;
pub mod backends;
pub mod config;
pub mod dataset;
pub mod hashing;
pub mod metrics;
pub mod router;
pub mod simulator;

use thiserror::Error;

/// Any error the workflow can raise, tagged by its originating module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Backend(#[from] backends::BackendError),
    #[error(transparent)]
    Router(#[from] router::RouterError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Simulator(#[from] simulator::SimulatorError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
}

impl Error {
    /// Name of the underlying error variant, e.g. `InfeasibleBudget`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Dataset(e) => e.name(),
            Error::Backend(e) => e.name(),
            Error::Router(e) => e.name(),
            Error::Metrics(e) => e.name(),
            Error::Augment(e) => e.name(),
            Error::Simulator(e) => e.name(),
            Error::Config(e) => e.name(),
        }
    }

    /// Module the error came from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Dataset(_) => "dataset",
            Error::Backend(_) => "backends",
            Error::Router(_) => "router",
            Error::Metrics(_) => "metrics",
            Error::Augment(_) => "augment",
            Error::Simulator(_) => "simulator",
            Error::Config(_) => "config",
        }
    }
}
