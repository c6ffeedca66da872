use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("non-finite activation in layer `{layer}`")]
    NumericLayer { layer: String },

    #[error("adaptation aborted at step {step}: loss became non-finite (last finite loss {last_finite:?})")]
    NumericAbort { step: usize, last_finite: Option<f64> },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error in {path}: {detail} (byte offset {offset})")]
    Data {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Codec(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data { .. } | Error::Io { .. } | Error::Checkpoint(_) | Error::Codec(_) => 3,
            Error::NonFinite(_)
            | Error::NumericLayer { .. }
            | Error::NumericAbort { .. }
            | Error::Diverged { .. } => 4,
            Error::Dimension { .. }
            | Error::Domain { .. }
            | Error::Contract(_)
            | Error::DegenerateBatch(_) => 3,
        }
    }
}
