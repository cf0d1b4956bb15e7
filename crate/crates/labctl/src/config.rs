// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration, read from TOML.
//!
//! ```toml
//! recipe = "kf1_zero_shot_parity"
//! seed = 1
//! out_dir = "runs/kf1"
//! source_layers = [2]
//!
//! [world]
//! plain_personas = 96
//!
//! [train.base]
//! epochs = 15
//! learning_rate = 0.003
//! ```
//!
//! Every field has a default; a file only lists what it changes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use verbalab_core::model::ModelConfig;
use verbalab_core::probe::ProbeConfig;
use verbalab_core::train::{LossMask, TrainConfig};
use verbalab_core::worldgen::stable_hash;

use crate::error::{Result, RunError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Kf1ZeroShotParity,
    Kf2Inversion,
    Kf3Personaqa,
    ProbeVsVerbalizer,
    Sensitivity,
    SwapLabel,
    KnowledgeCheck,
    /// Every recipe above, sharing one run directory.
    All,
}

impl Recipe {
    pub const EACH: [Recipe; 7] = [
        Recipe::Kf1ZeroShotParity,
        Recipe::Kf2Inversion,
        Recipe::Kf3Personaqa,
        Recipe::ProbeVsVerbalizer,
        Recipe::Sensitivity,
        Recipe::SwapLabel,
        Recipe::KnowledgeCheck,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Recipe::Kf1ZeroShotParity => "kf1_zero_shot_parity",
            Recipe::Kf2Inversion => "kf2_inversion",
            Recipe::Kf3Personaqa => "kf3_personaqa",
            Recipe::ProbeVsVerbalizer => "probe_vs_verbalizer",
            Recipe::Sensitivity => "sensitivity",
            Recipe::SwapLabel => "swap_label",
            Recipe::KnowledgeCheck => "knowledge_check",
            Recipe::All => "all",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Recipe {
    type Err = RunError;
    fn from_str(s: &str) -> Result<Self> {
        Recipe::EACH
            .into_iter()
            .chain([Recipe::All])
            .find(|r| r.key() == s)
            .ok_or_else(|| RunError::Validation(format!("unknown recipe `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub plain_personas: usize,
    pub plain_labels: usize,
    pub fantasy_personas: usize,
    pub fantasy_labels: usize,
    pub biographies: usize,
    pub interviews: usize,
    /// Multi-entity passages about non-persona names, mixed into pretraining.
    pub episodes: usize,
    /// How many of the episodes also train the inverters.
    pub inverter_episodes: usize,
    pub triples_per_relation: usize,
    pub questions_per_doc: usize,
    /// Fraction of plain personas whose documents no decoder trains on.
    pub heldout_frac: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            plain_personas: 96,
            plain_labels: 8,
            fantasy_personas: 60,
            fantasy_labels: 5,
            biographies: 4,
            interviews: 4,
            episodes: 3000,
            inverter_episodes: 1000,
            triples_per_relation: 20,
            questions_per_doc: 3,
            heldout_frac: 0.1,
        }
    }
}

/// Architecture shared by every role; verbalizers and inverters start as
/// copies of the base model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub context_len: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            ff_mult: 4,
            context_len: 128,
        }
    }
}

impl ModelParams {
    pub fn to_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            ff_mult: self.ff_mult,
            context_len: self.context_len,
            vocab_size,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageTrain {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub final_lr_frac: f64,
    pub grad_clip: Option<f64>,
}

impl Default for StageTrain {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 16,
            warmup_steps: 10,
            final_lr_frac: 0.1,
            grad_clip: Some(1.0),
        }
    }
}

impl StageTrain {
    fn with(epochs: usize, learning_rate: f64, warmup_steps: usize) -> Self {
        Self {
            epochs,
            learning_rate,
            warmup_steps,
            ..Self::default()
        }
    }

    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_steps: self.warmup_steps,
            seed,
            loss_mask_mode: LossMask::FullSequence,
            grad_clip: self.grad_clip,
            final_lr_frac: self.final_lr_frac,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSections {
    /// From scratch on plain-persona documents plus episodes.
    pub base: StageTrain,
    pub target_shuffled: StageTrain,
    pub target_fantasy: StageTrain,
    pub lit: StageTrain,
    pub inverter_multi: StageTrain,
    pub inverter_single: StageTrain,
}

impl Default for TrainSections {
    fn default() -> Self {
        Self {
            base: StageTrain::with(15, 3e-3, 20),
            target_shuffled: StageTrain::with(10, 2e-3, 10),
            target_fantasy: StageTrain::with(40, 3e-3, 10),
            lit: StageTrain::with(5, 5e-4, 10),
            inverter_multi: StageTrain::with(12, 2e-3, 10),
            inverter_single: StageTrain::with(3, 2e-3, 10),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderParams {
    /// Layer whose activations the verbalizer and inverters are trained on.
    pub layer: usize,
    /// Bare-text examples mixed into verbalizer training.
    pub rehearsal_plain: usize,
    /// Text examples preceded by unrelated patched activations.
    pub rehearsal_patched: usize,
}

impl Default for DecoderParams {
    fn default() -> Self {
        Self {
            layer: 2,
            rehearsal_plain: 500,
            rehearsal_patched: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeParams {
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub iterations: usize,
    pub standardize: bool,
    /// Cross-validation folds over personas; every persona is held out once.
    pub folds: usize,
    /// Train share for the single stratified split of the `probe` subcommand.
    pub train_frac: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        let d = ProbeConfig::default();
        Self {
            l1_weight: d.l1_weight,
            l2_weight: d.l2_weight,
            iterations: d.iterations,
            standardize: d.standardize,
            folds: 5,
            train_frac: 0.8,
        }
    }
}

impl ProbeParams {
    pub fn to_probe_config(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            l1_weight: self.l1_weight,
            l2_weight: self.l2_weight,
            iterations: self.iterations,
            seed,
            standardize: self.standardize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// Plain personas (from the front of the list) used by the sensitivity suite.
    pub sensitivity_personas: usize,
    pub alpha: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            sensitivity_personas: 48,
            alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub recipe: Recipe,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Layers activations are read from at evaluation time.
    pub source_layers: Vec<usize>,
    pub world: WorldParams,
    pub model: ModelParams,
    pub train: TrainSections,
    pub decoder: DecoderParams,
    pub probe: ProbeParams,
    pub eval: EvalParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            recipe: Recipe::All,
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            source_layers: vec![2],
            world: WorldParams::default(),
            model: ModelParams::default(),
            train: TrainSections::default(),
            decoder: DecoderParams::default(),
            probe: ProbeParams::default(),
            eval: EvalParams::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> RunError {
    RunError::Validation(msg.into())
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses a possibly partial config. Tables in `text` are merged over the
    /// full default config, so a partial `[train.<stage>]` keeps that stage's
    /// own defaults rather than the generic ones.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::default()).expect("config serialises");
        merge_tables(&mut merged, user);
        merged.try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("schema_version {} is not supported", self.schema_version)));
        }
        let m = &self.model;
        self.model.to_config(16, 0).validate().map_err(|e| invalid(e.to_string()))?;
        if self.source_layers.is_empty() {
            return Err(invalid("source_layers must name at least one layer"));
        }
        for &l in self.source_layers.iter().chain([&self.decoder.layer]) {
            if l == 0 || l > m.n_layers {
                return Err(invalid(format!("layer {l} outside 1..={}", m.n_layers)));
            }
        }
        let mut sorted = self.source_layers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.source_layers.len() {
            return Err(invalid("source_layers lists a layer twice"));
        }
        let w = &self.world;
        if w.plain_personas < 10 || w.fantasy_personas < 2 {
            return Err(invalid("need at least 10 plain and 2 fantasy personas"));
        }
        if w.biographies + w.interviews == 0 {
            return Err(invalid("every persona needs at least one document"));
        }
        if !(w.heldout_frac > 0.0 && w.heldout_frac < 1.0) {
            return Err(invalid("world.heldout_frac must lie strictly between 0 and 1"));
        }
        if w.inverter_episodes > w.episodes {
            return Err(invalid("world.inverter_episodes exceeds world.episodes"));
        }
        if w.triples_per_relation == 0 || w.questions_per_doc == 0 {
            return Err(invalid("triples_per_relation and questions_per_doc must be positive"));
        }
        for (name, s) in self.stage_trains() {
            s.to_train_config(0).validate().map_err(|e| invalid(format!("train.{name}: {e}")))?;
        }
        self.probe.to_probe_config(0).validate().map_err(|e| invalid(format!("probe: {e}")))?;
        if self.probe.folds < 2 || self.probe.folds > w.fantasy_personas {
            return Err(invalid("probe.folds must lie in 2..=fantasy_personas"));
        }
        if !(self.probe.train_frac > 0.0 && self.probe.train_frac < 1.0) {
            return Err(invalid("probe.train_frac must lie strictly between 0 and 1"));
        }
        if self.eval.sensitivity_personas == 0 || self.eval.sensitivity_personas > w.plain_personas {
            return Err(invalid("eval.sensitivity_personas must lie in 1..=plain_personas"));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(invalid("eval.alpha must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    fn stage_trains(&self) -> [(&'static str, &StageTrain); 6] {
        let t = &self.train;
        [
            ("base", &t.base),
            ("target_shuffled", &t.target_shuffled),
            ("target_fantasy", &t.target_fantasy),
            ("lit", &t.lit),
            ("inverter_multi", &t.inverter_multi),
            ("inverter_single", &t.inverter_single),
        ]
    }

    /// Seed for one stage: the master seed plus a hash of the stage name.
    pub fn sub_seed(&self, stage: &str) -> u64 {
        sub_seed(self.seed, stage)
    }

    /// Hash of the semantic content; the output directory does not count.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(o) = v.as_object_mut() {
            o.remove("out_dir");
        }
        fingerprint_value(&v)
    }
}

pub fn sub_seed(master: u64, stage: &str) -> u64 {
    master.wrapping_add(stable_hash(0, stage))
}

/// JSON with object keys sorted at every level.
pub fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&m[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// First 16 hex digits of SHA-256 over the canonical JSON.
pub fn fingerprint_value(v: &serde_json::Value) -> String {
    let digest = Sha256::digest(canonical_json(v).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 9\n[train.base]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.base.epochs, 2);
        assert_eq!(cfg.train.base.learning_rate, TrainSections::default().base.learning_rate);
        assert_eq!(cfg.world, WorldParams::default());
    }

    #[test]
    fn partial_stage_table_keeps_that_stage_defaults() {
        let cfg = ExperimentConfig::from_toml("[train.target_fantasy]\nepochs = 41\n").unwrap();
        let d = TrainSections::default().target_fantasy;
        assert_eq!(cfg.train.target_fantasy, StageTrain { epochs: 41, ..d });
        assert!(ExperimentConfig::from_toml("[train.target_fantasy]\nepoch = 41\n").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nwizard = 1\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("sede = 3\n"), Err(RunError::Validation(_))));
        assert!(ExperimentConfig::from_toml("[world]\npersonas = 3\n").is_err());
    }

    #[test]
    fn fingerprint_ignores_field_order_and_out_dir() {
        let a = ExperimentConfig::from_toml("seed = 4\nsource_layers = [1, 2]\n[model]\nd_model = 32\nn_layers = 2\n").unwrap();
        let b = ExperimentConfig::from_toml("[model]\nn_layers = 2\nd_model = 32\n[world]\n").unwrap();
        let mut b = ExperimentConfig {
            seed: 4,
            source_layers: vec![1, 2],
            ..b
        };
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 5;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn canonical_json_sorts_nested_keys() {
        let x: serde_json::Value = serde_json::from_str(r#"{"b":{"y":1,"x":[{"d":2,"c":3}]},"a":null}"#).unwrap();
        assert_eq!(canonical_json(&x), r#"{"a":null,"b":{"x":[{"c":3,"d":2}],"y":1}}"#);
    }

    #[test]
    fn validation_catches_bad_layers() {
        let mut cfg = ExperimentConfig {
            source_layers: vec![0],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.source_layers = vec![5];
        assert!(cfg.validate().is_err());
        cfg.source_layers = vec![1, 1];
        assert!(cfg.validate().is_err());
        cfg.source_layers = vec![1, 4];
        cfg.validate().unwrap();
    }

    #[test]
    fn sub_seeds_differ_by_stage() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.sub_seed("base"), cfg.sub_seed("lit"));
        assert_eq!(cfg.sub_seed("base"), sub_seed(1, "base"));
    }
}
