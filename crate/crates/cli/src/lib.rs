//! Command-line verbs and the annotation API over `camsel`.

pub mod args;
pub mod commands;
pub mod serve;

pub use args::Cli;
pub use commands::{run, CliError};
