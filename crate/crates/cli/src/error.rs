use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, unreadable or malformed files.
    Input,
    Internal,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Input => 1,
            ErrorKind::Internal => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait Classify<T> {
    fn input(self) -> CliResult<T>;
    fn internal(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn input(self) -> CliResult<T> {
        self.map_err(|e| CliError { kind: ErrorKind::Input, source: e.into() })
    }

    fn internal(self) -> CliResult<T> {
        self.map_err(|e| CliError { kind: ErrorKind::Internal, source: e.into() })
    }
}

pub fn input_error(msg: impl fmt::Display) -> CliError {
    CliError { kind: ErrorKind::Input, source: anyhow::anyhow!("{msg}") }
}
