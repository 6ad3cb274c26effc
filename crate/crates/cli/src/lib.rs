//! Library side of the `swingup` executable: configuration, commands and
//! the self-check suite.

pub mod checks;
pub mod commands;
pub mod config;
pub mod csv;
pub mod error;
pub mod sim;

pub use config::RunConfig;
pub use error::CliError;
