//! Training, evaluation and layer-similarity runs for scm-core models.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
