use std::path::PathBuf;

/// Errors produced while configuring or running simulations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("alpha level {level} is outside 0..={max}")]
    AlphaOutOfRange { level: u32, max: u32 },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid parameter `{key}`: {message}")]
    InvalidParam { key: String, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("replicate with seed {seed:#018x} failed: {message}")]
    ReplicateFailed { seed: u64, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(key: &str, message: impl Into<String>) -> Self {
        Error::InvalidParam {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::ReplicateFailed { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
