//! Errors carrying a process exit code.

use std::fmt;

/// `code` 2 marks bad input (config, paths, arguments); 1 everything else.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn usage(source: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, source: source.into() }
    }

    pub fn runtime(source: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, source: source.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::runtime(e)
    }
}

impl From<cl4st_core::Error> for CliError {
    fn from(e: cl4st_core::Error) -> Self {
        match e {
            cl4st_core::Error::Load { .. } | cl4st_core::Error::Invalid(_) => Self::usage(e),
            _ => Self::runtime(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
