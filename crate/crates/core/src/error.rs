use std::fmt;

use thiserror::Error;

/// One failed model or policy invariant. Violations are data, not errors:
/// [`crate::SamgModel::validate`] returns them as a list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl Violation {
    pub(crate) fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SamgError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}{message}", line_prefix(*.line))]
    Semantic {
        line: Option<usize>,
        message: String,
    },

    #[error("invalid model: {}", join(.0))]
    InvalidModel(Vec<Violation>),

    #[error("invalid policy: {}", join(.0))]
    InvalidPolicy(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown built-in game `{0}` (expected one of: fig4, fig5)")]
    UnknownGame(String),

    #[error("{what} has {size} elements, exceeding the limit of {limit}")]
    SizeGuard {
        what: String,
        size: u128,
        limit: u128,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = SamgError> = std::result::Result<T, E>;
