use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    /// A caller-supplied parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// An input violates a domain requirement (e.g. behavior policy support).
    #[error("domain error: {0}")]
    Domain(String),
    /// A numerical routine failed or produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A configuration file failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
