//! Configuration, subcommands and report files behind the `dnnopt` binary.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{cmd_compare, cmd_run, cmd_sensitivity};
pub use config::{Algorithm, Overrides, RunConfig};
