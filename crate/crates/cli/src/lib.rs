//! Command implementations and file formats behind the `graphskel` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use config::{RawOptions, RunConfig};
pub use error::{CliError, CliResult};
