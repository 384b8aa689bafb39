use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("dataset is empty after {stage}")]
    EmptyDataset { stage: &'static str },
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("resource limit exceeded: {what} needs {needed} but budget `{budget_name}` is {budget}")]
    Resource {
        what: String,
        needed: usize,
        budget_name: &'static str,
        budget: usize,
    },
    #[error("shape mismatch in `{tensor}`: expected {expected:?}, found {found:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value in `{tensor}`")]
    Numeric { tensor: String },
    #[error("checkpoint error in section `{section}`: {message}")]
    Checkpoint { section: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(tensor: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            tensor: tensor.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    /// True for errors caused by bad configuration or user input rather than
    /// by the data or the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Argument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
