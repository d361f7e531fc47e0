//! Command-line harness for the `pfa` binary: configuration, file formats,
//! the dense replay oracle and the four subcommands.

pub mod bench;
pub mod config;
pub mod error;
pub mod flops;
pub mod formats;
pub mod oracle;
pub mod run;
pub mod verify;

pub use config::RunConfig;
pub use error::{CliError, Result};
