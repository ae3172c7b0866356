//! Library side of the `splitbcd` command: configuration parsing and the
//! subcommand implementations.

pub mod commands;
pub mod config;
