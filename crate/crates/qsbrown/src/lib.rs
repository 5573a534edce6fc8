//! Command-line front end for `qsbrown-core`: model files, JSON reports and
//! the `qsbrown` subcommands.

pub mod cli;
pub mod error;
pub mod io;
pub mod report;

pub use cli::run;
pub use error::CliError;
