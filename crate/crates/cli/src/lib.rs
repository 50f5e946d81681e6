//! Library side of the experiment runner: config parsing and multi-seed
//! execution, kept separate from the binary so tests can drive them
//! directly.

use std::fmt;

pub mod config;
pub mod runner;

pub use config::parse_config;
pub use runner::{content_hash, run, FileEntry, RunManifest};

/// Errors split by exit code: config problems exit 1, runtime failures 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
