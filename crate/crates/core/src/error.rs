use std::fmt;

use serde::{Deserialize, Serialize};

/// A validation finding tied to a location in the model definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Stable machine-readable code, e.g. `map-row-sum`.
    pub code: String,
    /// Dotted field path, e.g. `states[0].map.d0[1]`.
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: &str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "[{}] {}", self.code, self.message)
        } else {
            write!(f, "[{}] {}: {}", self.code, self.path, self.message)
        }
    }
}

/// Newline-separated rendering of a diagnostic list.
pub fn render_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model object violates one of its invariants.
    #[error("invalid model:\n{}", render_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Linear solve, iteration or error estimate failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The integration step is too coarse for the requested accuracy.
    #[error("step size {step} too coarse (local error estimate {estimate:.3e}); use a step of at most {required:.3e}")]
    Refinement {
        step: f64,
        estimate: f64,
        required: f64,
    },

    /// A truncated improper integral left too much mass behind.
    #[error("horizon too short: {0}")]
    Horizon(String),

    /// Grids or inputs that must agree do not.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown name: {0}")]
    Lookup(String),
}

impl Error {
    pub fn invalid(code: &str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid(vec![Diagnostic::new(code, path, message)])
    }

    /// Prefix every diagnostic path with `prefix`.
    pub fn at(self, prefix: &str) -> Self {
        match self {
            Error::Invalid(diags) => Error::Invalid(
                diags
                    .into_iter()
                    .map(|mut d| {
                        d.path = join_path(prefix, &d.path);
                        d
                    })
                    .collect(),
            ),
            other => other,
        }
    }
}

pub(crate) fn join_path(prefix: &str, rest: &str) -> String {
    if prefix.is_empty() {
        rest.to_string()
    } else if rest.is_empty() {
        prefix.to_string()
    } else if rest.starts_with('[') {
        format!("{prefix}{rest}")
    } else {
        format!("{prefix}.{rest}")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
