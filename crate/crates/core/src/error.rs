//! Error taxonomy shared by every module in the crate.
//!
//! Variants are grouped by how a caller should react: `Shape` and `Config`
//! mean the inputs can never work, `Numeric` and `Training` mean this run
//! went bad, `Io` wraps filesystem failures on artifacts.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions are incompatible with the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of its documented range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// A numeric routine produced or detected a non-finite or invalid value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An iterative routine hit its iteration cap before converging.
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    /// A tape operation was applied in a way the graph cannot support.
    #[error("graph error: {0}")]
    Graph(String),

    /// An index or key is not present in the queried table.
    #[error("lookup failed: {0}")]
    Lookup(String),

    /// Training aborted; `epoch` matches the history numbering, where 1 is
    /// the first pass over the data.
    #[error("training failed at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Artifact files that parse but violate their format contract.
    #[error("malformed artifact: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Tags an error with the 1-based epoch it surfaced in. Errors that are
    /// already training failures keep their original epoch.
    pub fn into_training(self, epoch: usize) -> Self {
        match self {
            Error::Training { .. } => self,
            other => Error::Training { epoch, message: other.to_string() },
        }
    }

    pub fn lookup(msg: impl Into<String>) -> Self {
        Error::Lookup(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
