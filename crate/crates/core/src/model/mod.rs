// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tiny pre-norm decoder-only transformer with learned positional
//! embeddings and an untied output head.

mod activation;
pub mod checkpoint;
mod config;
mod forward;
mod params;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use activation::{ActivationMatrix, ActivationVector, Payload, PatchSpec};
pub use config::ModelConfig;
pub use forward::{ForwardOutput, KvCache};
pub use params::{Layout, ParamEntry, ParamStore};

pub(crate) use forward::{flatten_patches, BlockTape, PassHooks};

use crate::error::Result;
use crate::scalar::Scalar;

/// What a model is used for in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Model whose activations are read.
    Target,
    /// Model that consumes injected activations and answers prompts.
    Verbalizer,
    /// Model that reconstructs input text from activations.
    Inverter,
    /// Plain text model that answers prompts without activations.
    Interpreter,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Target => "target",
            Role::Verbalizer => "verbalizer",
            Role::Inverter => "inverter",
            Role::Interpreter => "interpreter",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Role {
    type Err = crate::error::LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Role::Target),
            "verbalizer" => Ok(Role::Verbalizer),
            "inverter" => Ok(Role::Inverter),
            "interpreter" => Ok(Role::Interpreter),
            other => Err(crate::error::LabError::Unknown {
                kind: "role",
                name: other.to_string(),
            }),
        }
    }
}

/// Weights plus identity of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandle<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub role: Role,
    /// Free-text training lineage, e.g. `scratch(seed=3) > finetune(fantasy)`.
    pub provenance: String,
    /// Identifier stamped on captured activations.
    pub id: String,
}

impl<T: Scalar> ModelHandle<T> {
    /// Freshly initialised model.
    pub fn new(config: ModelConfig, role: Role, id: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: ParamStore::init(&config),
            config,
            role,
            provenance: format!("init(seed={})", config.seed),
            id: id.into(),
        })
    }

    /// Copy with a new role and id; weights are shared by value.
    pub fn derive(&self, role: Role, id: impl Into<String>, step: &str) -> Self {
        Self {
            config: self.config,
            params: self.params.clone(),
            role,
            provenance: format!("{} > {step}", self.provenance),
            id: id.into(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.data.len()
    }

    /// SHA-256 over the little-endian weight bytes.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(self.params.data.len() * T::BYTES);
        for &v in &self.params.data {
            v.write_le(&mut bytes);
        }
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn weights_finite(&self) -> bool {
        self.params.all_finite()
    }
}
