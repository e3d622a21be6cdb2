use std::path::PathBuf;

/// Errors raised anywhere in the training stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the message with where the failure happened.
    pub fn context(self, at: impl std::fmt::Display) -> Self {
        match self {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{at}: {m}")),
            Error::State(m) => Error::State(format!("{at}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{at}: {m}")),
            Error::Config(m) => Error::Config(format!("{at}: {m}")),
            Error::Format(m) => Error::Format(format!("{at}: {m}")),
            io @ Error::Io { .. } => io,
        }
    }
}

/// Fails with a numeric error if any value is NaN or infinite.
pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric(format!(
            "{what}: non-finite value {} at index {i}",
            values[i]
        ))),
    }
}
