//! Config-driven runner: parses a JSON experiment description, dispatches to
//! the core library and writes CSV tables plus a run manifest.

pub mod config;
pub mod models;
pub mod run;

pub use config::{parse_config, parse_config_with_overrides, RunConfig};
pub use run::{run, Status};
