//! Configuration, orchestration and persistence for the `gsqg` binary.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{parse_config, Command, ConfigError, RunConfig};
pub use run::{run, Outcome, RunError};
