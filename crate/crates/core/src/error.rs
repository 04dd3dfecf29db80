use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation input: {0}")]
    DegenerateInput(String),

    #[error("operation would produce an empty result: {0}")]
    EmptyResult(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("invalid timestep {t} (valid range {lo}..={hi})")]
    InvalidTimestep { t: usize, lo: usize, hi: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("gradient mismatch on `{param}`[{index}]: analytic {analytic:e}, numeric {numeric:e} (rel {rel:e})")]
    GradMismatch {
        param: String,
        index: usize,
        analytic: f64,
        numeric: f64,
        rel: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid smoothing window {0}: must be odd, >= 3 and <= frame count")]
    InvalidWindow(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("checkpoint pairing error: {0}")]
    Checkpoint(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error families, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Io,
    Format,
    Numerical,
    Data,
}

impl Error {
    pub fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Config(_) => ErrorFamily::Config,
            Error::Io { .. } => ErrorFamily::Io,
            Error::Format { .. } | Error::Checkpoint(_) => ErrorFamily::Format,
            Error::DegenerateInput(_)
            | Error::NonFiniteLoss { .. }
            | Error::GradMismatch { .. }
            | Error::InvalidTimestep { .. }
            | Error::ShapeMismatch(_)
            | Error::DimensionMismatch(_) => ErrorFamily::Numerical,
            Error::EmptyResult(_)
            | Error::TooShort(_)
            | Error::InsufficientData(_)
            | Error::InvalidWindow(_) => ErrorFamily::Data,
            Error::Stage { source, .. } => source.family(),
        }
    }
}
