use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad shapes, out-of-range configuration, unsupported combinations.
    #[error("invalid input: {0}")]
    Input(String),

    /// A factorization failed or a quantity became non-finite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file contents, located where possible.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported model format version `{0}` (expected `{expected}`)", expected = crate::modelio::FORMAT_VERSION)]
    UnsupportedVersion(String),

    #[error("unknown model tag `{0}`")]
    UnknownTag(String),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code, stable across releases.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) => "E_INPUT",
            Error::Numeric(_) => "E_NUMERIC",
            Error::Io { .. } => "E_IO",
            Error::Parse(_) => "E_PARSE",
            Error::UnsupportedVersion(_) => "E_VERSION",
            Error::UnknownTag(_) => "E_TAG",
        }
    }

    /// Process exit status: 2 input/config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
