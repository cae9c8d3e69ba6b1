//! Library side of the `atc` command-line tool.

pub mod bench;
pub mod commands;
pub mod error;
pub mod tensor;

pub use error::{CliError, Result};
