use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] nykpca::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error in {path}: {msg}")]
    Data { path: PathBuf, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    pub fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        HarnessError::Data { path: path.into(), msg: msg.into() }
    }

    /// Process exit code: 2 usage or config, 3 data format or i/o, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(nykpca::Error::Numeric(_)) => 4,
            HarnessError::Core(nykpca::Error::Format(_)) => 3,
            HarnessError::Core(_) | HarnessError::Config(_) => 2,
            HarnessError::Data { .. } | HarnessError::Io { .. } => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Core(nykpca::Error::Usage("x".into())).exit_code(), 2);
        assert_eq!(HarnessError::Core(nykpca::Error::Domain("x".into())).exit_code(), 2);
        assert_eq!(HarnessError::Core(nykpca::Error::Numeric("x".into())).exit_code(), 4);
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::data("f.csv", "line 2").exit_code(), 3);
    }
}
