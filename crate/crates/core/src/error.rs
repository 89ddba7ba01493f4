use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("class {0} is not present in the target training partition")]
    MissingClass(usize),

    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("balance error: {0}")]
    Balance(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty evaluation set: {0}")]
    Empty(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Name of the harness phase that produced this error, if any.
    pub fn phase(&self) -> Option<&'static str> {
        match self {
            Error::Phase { phase, .. } => Some(phase),
            _ => None,
        }
    }
}

pub(crate) trait PhaseExt<T> {
    fn in_phase(self, phase: &'static str) -> Result<T>;
}

impl<T> PhaseExt<T> for Result<T> {
    fn in_phase(self, phase: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            already @ Error::Phase { .. } => already,
            other => Error::Phase {
                phase,
                source: Box::new(other),
            },
        })
    }
}
