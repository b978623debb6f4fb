use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("constraint error at t={time}: {message}")]
    Constraint { time: u32, message: String },

    #[error("representation error: {0}")]
    Representation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("prediction error: {0}")]
    Prediction(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("weights error: {0}")]
    Weights(String),

    #[error("unsupported weights version {found:?} (supported: {supported:?})")]
    WeightsVersion { found: String, supported: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("malformed log: {0}")]
    Log(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(std::path::PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable class name, used by the CLI's one-line error output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Constraint { .. } => "constraint",
            Error::Representation(_) => "representation",
            Error::Numeric(_) => "numeric",
            Error::Prediction(_) => "prediction",
            Error::Training { .. } => "training",
            Error::Weights(_) | Error::WeightsVersion { .. } => "weights",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Log(_) => "log",
            Error::MissingFile(_) => "missing-file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
