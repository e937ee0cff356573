use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic bytes {found:02x?}, expected \"VGD1\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated payload while reading {context}")]
    Truncated { context: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("missing array `{0}`")]
    MissingArray(String),

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible bathymetry: {0}")]
    InfeasibleBathymetry(String),

    #[error("wet-channel rejection exhausted after {attempts} attempts")]
    RejectionExhausted { attempts: usize },

    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::DimensionMismatch(_)
                | Error::EmptySplit(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
