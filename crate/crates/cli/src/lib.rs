//! Experiment driver for `robust-boost`: CSV and synthetic datasets, layered
//! configuration, the boosting, certification and checking pipelines, model
//! archives and metrics output.

pub mod archive;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod run;

pub use archive::{Archive, Model, RadiusModel};
pub use config::{Cli, Command, ExperimentConfig, Task};
pub use error::{ArchiveError, CliError, DataError};
