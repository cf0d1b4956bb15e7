// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment runner: TOML configs, a cached stage graph from world
//! generation through training to evaluation, canned recipes, and the
//! `verbalab` command line.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod recipe;
pub mod runner;
pub mod store;

pub use config::{ExperimentConfig, Recipe};
pub use error::{Result, RunError};
pub use recipe::{run_recipe, RunReport};
pub use runner::{Lab, Stage};
