use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("LFSR seed must be nonzero")]
    ZeroSeed,

    #[error("QPSK needs an even number of bits, got {0}")]
    OddPayload(usize),

    #[error("sample rate mismatch: {0} S/s vs {1} S/s")]
    SampleRateMismatch(f64, f64),

    #[error("signal has zero power")]
    ZeroPower,

    #[error("input is empty")]
    Empty,

    #[error("input too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("buffer of {0} samples exceeds the configured maximum of {1}")]
    BufferTooLarge(u64, u64),

    #[error("unknown link {0}")]
    UnknownLink(String),

    #[error("scenario has no attacker")]
    NoAttacker,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed IQ file {0}: {1}")]
    MalformedIq(PathBuf, String),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user configuration rather than runtime
    /// processing. Drives the CLI exit code.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter(_) | Error::UnknownLink(_)
        )
    }
}
