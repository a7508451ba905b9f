//! File formats, subcommands and oracle suites around `sbm-core`.

pub mod checkpoint;
pub mod cmd;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod suites;
pub mod threads;
pub mod wav;

pub use error::{CliError, CliResult};
