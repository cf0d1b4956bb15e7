// SPDX-License-Identifier: MIT OR Apache-2.0

//! Captured residual-stream states and patch requests.
//!
//! Layer `ℓ` (1-based) names the residual-stream output of block `ℓ`,
//! after its residual add. A patch with `target_layer = t` replaces the
//! state *entering* block `t`, so the state captured at layer `ℓ` is
//! re-injected unchanged by a patch at `target_layer = ℓ + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::scalar::Scalar;

/// One token's hidden state at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationVector<T> {
    pub layer: usize,
    pub token_index: usize,
    pub values: Vec<T>,
    pub source_model_id: String,
}

/// All token positions at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMatrix<T> {
    pub layer: usize,
    pub rows: Vec<Vec<T>>,
    pub source_model_id: String,
}

impl<T: Scalar> ActivationVector<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> ActivationMatrix<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Row `i` as a standalone vector.
    pub fn row(&self, i: usize) -> Option<ActivationVector<T>> {
        self.rows.get(i).map(|r| ActivationVector {
            layer: self.layer,
            token_index: i,
            values: r.clone(),
            source_model_id: self.source_model_id.clone(),
        })
    }

    pub fn last(&self) -> Option<ActivationVector<T>> {
        self.rows.len().checked_sub(1).and_then(|i| self.row(i))
    }

    /// Keeps the last `n` rows (left truncation).
    pub fn keep_last(&mut self, n: usize) {
        if self.rows.len() > n {
            let drop = self.rows.len() - n;
            self.rows.drain(..drop);
        }
    }

    pub fn validate(&self, d_model: usize) -> Result<()> {
        if self.rows.is_empty() {
            return Err(LabError::Empty("activation matrix"));
        }
        for r in &self.rows {
            if r.len() != d_model {
                return Err(LabError::Dimension {
                    what: "activation row",
                    expected: d_model,
                    got: r.len(),
                });
            }
            if !r.iter().all(|v| v.is_finite()) {
                return Err(LabError::NonFinite("activation matrix".into()));
            }
        }
        Ok(())
    }
}

/// What gets written into the residual stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload<T> {
    Vector(ActivationVector<T>),
    Matrix(ActivationMatrix<T>),
}

impl<T: Scalar> Payload<T> {
    pub fn rows(&self) -> Vec<&[T]> {
        match self {
            Payload::Vector(v) => vec![v.values.as_slice()],
            Payload::Matrix(m) => m.rows.iter().map(Vec::as_slice).collect(),
        }
    }
}

/// Replace hidden states entering `target_layer` at `target_positions`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec<T> {
    pub payload: Payload<T>,
    pub target_layer: usize,
    pub target_positions: Vec<usize>,
    /// Rescale each payload row to the norm of the state it replaces.
    /// Off by default: payloads are injected as captured.
    pub match_norm: bool,
}

impl<T: Scalar> PatchSpec<T> {
    pub fn vector(v: ActivationVector<T>, target_layer: usize, position: usize) -> Self {
        Self {
            payload: Payload::Vector(v),
            target_layer,
            target_positions: vec![position],
            match_norm: false,
        }
    }

    /// Rows go to consecutive positions starting at `first_position`.
    pub fn matrix(m: ActivationMatrix<T>, target_layer: usize, first_position: usize) -> Self {
        let n = m.rows.len();
        Self {
            payload: Payload::Matrix(m),
            target_layer,
            target_positions: (first_position..first_position + n).collect(),
            match_norm: false,
        }
    }

    /// Checks shape, ordering and finiteness against a model and prompt length.
    pub fn validate(&self, n_layers: usize, d_model: usize, prompt_len: usize) -> Result<()> {
        crate::error::check_range("patch target layer", self.target_layer, 1, n_layers)?;
        let rows = self.payload.rows();
        if rows.len() != self.target_positions.len() {
            return Err(LabError::Dimension {
                what: "patch positions vs payload rows",
                expected: rows.len(),
                got: self.target_positions.len(),
            });
        }
        if rows.is_empty() {
            return Err(LabError::Empty("patch payload"));
        }
        for w in self.target_positions.windows(2) {
            if w[1] <= w[0] {
                return Err(LabError::Precondition(
                    "patch positions must be strictly increasing".into(),
                ));
            }
        }
        for &p in &self.target_positions {
            if p >= prompt_len {
                return Err(LabError::OutOfRange {
                    what: "patch position",
                    got: p,
                    lo: 0,
                    hi: prompt_len.saturating_sub(1),
                });
            }
        }
        for r in rows {
            if r.len() != d_model {
                return Err(LabError::Dimension {
                    what: "patch payload",
                    expected: d_model,
                    got: r.len(),
                });
            }
            if !r.iter().all(|v| v.is_finite()) {
                return Err(LabError::NonFinite("patch payload".into()));
            }
        }
        Ok(())
    }
}
