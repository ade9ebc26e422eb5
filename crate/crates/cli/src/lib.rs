//! Command-line front end: TOML configuration, task runners and CSV output.

pub mod config;
pub mod output;
pub mod tasks;
