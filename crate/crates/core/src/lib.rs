// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tiny transformers, synthetic persona worlds, and tools for reading a
//! model's hidden states back out as text.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the `f32` instantiation used by the lab.

pub mod error;
pub mod evalstats;
pub mod inversion;
pub mod linalg;
pub mod model;
pub mod probe;
pub mod scalar;
pub mod tokenizer;
pub mod train;
pub mod verbalize;
pub mod worldgen;

pub use error::{LabError, Result};
pub use scalar::Scalar;
pub use tokenizer::{TokenId, Tokenizer};

pub type Model = model::ModelHandle<f32>;
pub type ActVector = model::ActivationVector<f32>;
pub type ActMatrix = model::ActivationMatrix<f32>;
pub type Patch = model::PatchSpec<f32>;
pub type TrainExample = train::Example<f32>;
pub type Affine = train::AffineMap<f32>;
pub type LinearProbe = probe::Probe<f32>;
