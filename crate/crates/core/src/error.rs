use std::fmt;

use thiserror::Error;

/// A single violated record invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub field: &'static str,
    pub rule: String,
}

impl ValidationError {
    pub fn new(field: &'static str, rule: impl Into<String>) -> Self {
        Self {
            field,
            rule: rule.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {}", join(.0))]
    Validation(Vec<ValidationError>),

    #[error("series mismatch: stream {expected} cannot hold a {found} record")]
    SeriesMismatch { expected: String, found: String },

    #[error("unknown series `{0}`")]
    UnknownSeries(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("weather station registry is empty")]
    EmptyRegistry,

    #[error("duplicate station id `{0}`")]
    DuplicateStation(String),

    #[error("survey history is empty")]
    EmptyHistory,

    #[error("insufficient surveys (need {need}); participant has {have}")]
    InsufficientSurveys { need: usize, have: usize },

    #[error("no template for key `{0}`")]
    MissingTemplate(String),

    #[error("template `{key}` leaves placeholder {placeholder} unfilled")]
    UnfilledPlaceholder { key: String, placeholder: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input data rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

fn join(errors: &[ValidationError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
