//! Shared error type. Configuration errors always name the offending key so
//! callers can surface actionable messages (and map them to exit codes).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A parameter fails validation. `key` names the offending field.
    #[error("config error: `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// Recording another mechanism invocation would exceed the declared
    /// target budget. Raised before the mechanism fires.
    #[error(
        "privacy budget exhausted: composed total ({spent_eps:.6}, {spent_delta:.3e}) \
         exceeds target ({target_eps:.6}, {target_delta:.3e})"
    )]
    BudgetExhausted {
        spent_eps: f64,
        spent_delta: f64,
        target_eps: f64,
        target_delta: f64,
    },

    /// Two composition groups registered overlapping data slices; parallel
    /// composition across groups requires disjoint index ranges.
    #[error(
        "data slice overlap: group {group_a} holds [{a_start}, {a_end}) which intersects \
         group {group_b}'s [{b_start}, {b_end})"
    )]
    SliceOverlap {
        group_a: usize,
        a_start: usize,
        a_end: usize,
        group_b: usize,
        b_start: usize,
        b_end: usize,
    },

    /// A solver asked for more examples than the dataset holds.
    #[error("data exhausted: requested {requested} more examples with only {remaining} of {total} unconsumed")]
    DataExhausted {
        requested: usize,
        remaining: usize,
        total: usize,
    },

    /// Dataset text could not be parsed. Both positions are 1-based.
    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: usize,
        column: usize,
        reason: String,
    },

    /// A numeric routine left its supported regime (overflow, divergence).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Filesystem failure while reading or writing datasets and reports.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn config(key: &str, reason: impl Into<String>) -> Self {
        CoreError::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
