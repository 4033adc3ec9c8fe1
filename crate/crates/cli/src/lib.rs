//! Command-line front end and curation API server for adstory projects.

pub mod commands;
pub mod server;

pub use commands::{run, Cli, CliError, Command};
