use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("parse error at line {line}, column {col}: {message}")]
    Parse {
        line: usize,
        col: usize,
        message: String,
    },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("non-numeric cell at line {line}, column {col}")]
    NonNumericCell { line: usize, col: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] kcc_core::Error),
}

/// Machine-readable failure record written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        use kcc_core::Error as E;
        match self {
            CliError::Parse { .. } => "ParseError",
            CliError::UnknownVariable(_) => "UnknownVariable",
            CliError::NonNumericCell { .. } => "NonNumericCell",
            CliError::Config(_) => "ConfigError",
            CliError::Io(_) => "IoError",
            CliError::Core(e) => match e {
                E::NotPositiveDefinite { .. } => "NotPositiveDefinite",
                E::NumericalBreakdown { .. } => "NumericalBreakdown",
                E::DimensionMismatch(_) => "DimensionMismatch",
                E::NonFinite(_) => "NonFinite",
                E::ZeroVariance(_) => "ZeroVariance",
                E::InsufficientLength { .. } => "InsufficientLength",
                E::DegenerateInput(_) => "DegenerateInput",
                E::RankDeficient(_) => "RankDeficient",
                E::IllPosed(_) => "IllPosed",
                E::DomainError(_) => "DomainError",
                E::Config(_) => "ConfigError",
                E::UnknownBlock(_) => "UnknownBlock",
            },
        }
    }

    pub fn record(&self) -> ErrorRecord {
        let (line, column) = match self {
            CliError::Parse { line, col, .. } | CliError::NonNumericCell { line, col } => {
                (Some(*line), Some(*col))
            }
            _ => (None, None),
        };
        ErrorRecord {
            error: self.kind(),
            message: self.to_string(),
            line,
            column,
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(kcc_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
