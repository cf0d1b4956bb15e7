// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use verbalab_core::LabError;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// Bad config, bad flag value, or a precondition the user can fix.
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("stage `{stage}` in {dir} was built from a different configuration (fingerprint {found}, now {expected}); rerun with --force to rebuild")]
    Stale {
        stage: String,
        dir: PathBuf,
        found: String,
        expected: String,
    },

    #[error("run directory {0} is locked by another process (remove the .lock file if that process is gone)")]
    Locked(PathBuf),

    #[error("stage `{stage}` (seed {seed}) failed: {source}")]
    Stage {
        stage: String,
        seed: u64,
        #[source]
        source: Box<RunError>,
    },

    #[error(transparent)]
    Core(#[from] LabError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RunError {
    /// Process exit code: 2 for problems with the request, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) | RunError::Stale { .. } | RunError::Locked(_) => 2,
            RunError::Core(LabError::Config(_)) => 2,
            RunError::Stage { source, .. } => match **source {
                RunError::Validation(_) | RunError::Core(LabError::Config(_)) => 2,
                _ => 1,
            },
            _ => 1,
        }
    }
}

pub type Result<T, E = RunError> = std::result::Result<T, E>;
