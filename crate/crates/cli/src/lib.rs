//! Library side of the `spinlab` command: argument definitions, run-file
//! parsing and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod parse;

pub use commands::{run, Cli, CliError, Output};
