use std::fmt;

use thiserror::Error;

/// A single violated constraint found while validating a network/grid pair.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigIssue {
    NonPositiveParameter { name: String, value: f64 },
    NonFiniteParameter { name: String },
    ShapeMismatch { name: String, expected: usize, found: usize },
    GridMismatch { detail: String },
    CflViolation { ratio: f64 },
    InitialData { detail: String },
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigIssue::NonPositiveParameter { name, value } => {
                write!(f, "{name} must be positive (got {value})")
            }
            ConfigIssue::NonFiniteParameter { name } => write!(f, "{name} must be finite"),
            ConfigIssue::ShapeMismatch { name, expected, found } => {
                write!(f, "{name} has {found} entries, expected {expected}")
            }
            ConfigIssue::GridMismatch { detail } => write!(f, "grid mismatch: {detail}"),
            ConfigIssue::CflViolation { ratio } => {
                write!(f, "CFL condition violated: max_e(v_e)*tau/h = {ratio} > 1")
            }
            ConfigIssue::InitialData { detail } => write!(f, "initial data: {detail}"),
        }
    }
}

/// Validation failure carrying every violated constraint, not just the first.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration: {}", join_issues(.0))]
pub struct ValidationError(pub Vec<ConfigIssue>);

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl ValidationError {
    pub fn issues(&self) -> &[ConfigIssue] {
        &self.0
    }

    pub fn cfl_ratio(&self) -> Option<f64> {
        self.0.iter().find_map(|i| match i {
            ConfigIssue::CflViolation { ratio } => Some(*ratio),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("non-finite state value at processor {e}, cell {j}, step {k}")]
    NonFiniteState { e: usize, j: isize, k: usize },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("unsupported network shape: {0}")]
    UnsupportedShape(String),
    #[error("decay rate must satisfy 0 < tau*nu <= 1, got tau*nu = {0}")]
    DecayRate(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("oracle mismatch at {quantity}: engine {engine}, oracle {oracle}")]
    OracleMismatch {
        quantity: String,
        engine: f64,
        oracle: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Validation {
        path: String,
        #[source]
        source: ValidationError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
