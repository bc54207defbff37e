use std::fmt;
use std::io;
use std::path::PathBuf;

use seqbo_core::Error as CoreError;

/// Errors grouped by the exit status the command line reports for them.
#[derive(Debug)]
pub enum SeqboError {
    Config(String),
    Fixture { path: Option<PathBuf>, message: String },
    Io { path: PathBuf, source: io::Error },
    Numerical(CoreError),
    Validation(Vec<String>),
}

pub type Result<T> = std::result::Result<T, SeqboError>;

pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const FIXTURE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

impl SeqboError {
    pub fn fixture(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        SeqboError::Fixture {
            path: Some(path.into()),
            message: message.into(),
        }
    }

    pub fn coverage(message: impl Into<String>) -> Self {
        SeqboError::Fixture {
            path: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        SeqboError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            SeqboError::Config(_) => exit::CONFIG,
            SeqboError::Fixture { .. } | SeqboError::Io { .. } => exit::FIXTURE,
            SeqboError::Numerical(_) => exit::NUMERICAL,
            SeqboError::Validation(_) => exit::VALIDATION,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            SeqboError::Config(_) => "config",
            SeqboError::Fixture { .. } | SeqboError::Io { .. } => "fixture",
            SeqboError::Numerical(_) => "numerical",
            SeqboError::Validation(_) => "validation",
        }
    }
}

impl fmt::Display for SeqboError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeqboError::Config(m) => write!(f, "{m}"),
            SeqboError::Fixture { path: Some(p), message } => write!(f, "{}: {message}", p.display()),
            SeqboError::Fixture { path: None, message } => write!(f, "{message}"),
            SeqboError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            SeqboError::Numerical(e) => write!(f, "{e}"),
            SeqboError::Validation(v) => {
                write!(f, "{} violation(s)", v.len())?;
                for m in v {
                    write!(f, "\n  - {m}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for SeqboError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            SeqboError::Io { source, .. } => Some(source),
            SeqboError::Numerical(e) => Some(e),
            _ => None,
        }
    }
}

impl From<CoreError> for SeqboError {
    fn from(e: CoreError) -> Self {
        SeqboError::Numerical(e)
    }
}
