//! Configuration-driven front end for `diamond_core`.

pub mod config;
pub mod experiment;
pub mod tools;

pub use config::{parse_config, Config, ConfigError, RawConfig};
pub use experiment::{run_experiment, Artifacts, ExperimentError};
