// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by model, training, dataset and evaluation operations.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} out of range: got {got}, allowed {lo}..={hi}")]
    OutOfRange {
        what: &'static str,
        got: usize,
        lo: usize,
        hi: usize,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("incomplete results: {0}")]
    Incomplete(String),

    #[error("malformed record at line {line}: {detail}")]
    Format { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn check_range(what: &'static str, got: usize, lo: usize, hi: usize) -> Result<()> {
    if got < lo || got > hi {
        return Err(LabError::OutOfRange { what, got, lo, hi });
    }
    Ok(())
}
