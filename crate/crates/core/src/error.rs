//! Error type shared across the toolkit.

use thiserror::Error;

/// Anything that can go wrong while parsing files, talking to a backend,
/// or running an evaluation.
#[derive(Error, Debug)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate entry for {key}")]
    Duplicate { line: usize, key: String },

    #[error("line {line}: label {value} outside the 0..3 scale")]
    LabelRange { line: usize, value: i64 },

    #[error("{0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("backend returned status {status}: {body}")]
    Protocol { status: u16, body: String },

    #[error("mock script has no rule for request: {0}")]
    ScriptMiss(String),

    #[error("{0}")]
    Evaluation(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("threshold tuning failed: {0}")]
    Tuning(String),

    #[error("grade store is missing {} (pair, criterion) entries; first: {}", missing.len(), first_missing(missing))]
    IncompleteStore { missing: Vec<(String, String, String)> },

    #[error("grading aborted after {graded} new records ({skipped} already present): {cause}")]
    Aborted {
        graded: usize,
        skipped: usize,
        cause: Box<Error>,
    },
}

fn first_missing(missing: &[(String, String, String)]) -> String {
    match missing.first() {
        Some((q, d, c)) => format!("({q}, {d}, {c})"),
        None => "(none)".to_string(),
    }
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Transport(_) | Error::Protocol { .. } | Error::ScriptMiss(_) => 2,
            Error::Aborted { .. } => 3,
            _ => 1,
        }
    }
}
