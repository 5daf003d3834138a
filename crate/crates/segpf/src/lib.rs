//! Experiment pipeline around `segpf-core`: trace and artifact files,
//! TOML configuration, the staged CLI and SVG plots.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod stages;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
