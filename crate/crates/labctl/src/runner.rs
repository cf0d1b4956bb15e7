// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stage graph with content-hash caching.
//!
//! A stage is skipped when its manifest under `stages/` carries the current
//! fingerprint and every listed file still has its recorded digest. A
//! manifest with another fingerprint is an error unless `force` is set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use verbalab_core::model::{checkpoint, Role};
use verbalab_core::train::{finetune_decoder, finetune_decoder_with, rehearsal_examples, train_lm, DecoderMode, TrainReport};
use verbalab_core::worldgen::{write_documents_jsonl, write_eval_jsonl, write_decoder_jsonl, write_jsonl, Regime, WorldManifest};
use verbalab_core::Model;

use crate::config::{fingerprint_value, ExperimentConfig, SCHEMA_VERSION};
use crate::data::LabData;
use crate::error::{Result, RunError};
use crate::eval;
use crate::store::{csv_provenance, RunDir, StageManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    World,
    /// Pretrained on plain documents; the plain-regime target and the
    /// interpreter every method shares.
    Base,
    TargetShuffled,
    TargetFantasy,
    Lit,
    InverterMulti,
    InverterSingle,
    /// Verbalizers and probe on one regime's persona items.
    Eval(Regime),
    /// Single-split probes for one regime.
    Probe(Regime),
    Kf1,
    Kf2,
    ProbeVsVerbalizer,
    Sensitivity,
    SwapLabel,
    KnowledgeCheck,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::World => f.write_str("world"),
            Stage::Base => f.write_str("base"),
            Stage::TargetShuffled => f.write_str("target_shuffled"),
            Stage::TargetFantasy => f.write_str("target_fantasy"),
            Stage::Lit => f.write_str("lit"),
            Stage::InverterMulti => f.write_str("inverter_multi"),
            Stage::InverterSingle => f.write_str("inverter_single"),
            Stage::Eval(r) => write!(f, "eval_{r}"),
            Stage::Probe(r) => write!(f, "probe_{r}"),
            Stage::Kf1 => f.write_str("kf1"),
            Stage::Kf2 => f.write_str("kf2"),
            Stage::ProbeVsVerbalizer => f.write_str("probe_vs_verbalizer"),
            Stage::Sensitivity => f.write_str("sensitivity"),
            Stage::SwapLabel => f.write_str("swap_label"),
            Stage::KnowledgeCheck => f.write_str("knowledge_check"),
        }
    }
}

impl Stage {
    pub fn deps(self) -> Vec<Stage> {
        use Stage::*;
        match self {
            World => vec![],
            Base => vec![World],
            TargetShuffled | TargetFantasy | Lit | InverterMulti | InverterSingle => vec![Base],
            Eval(r) | Probe(r) => {
                let mut d = vec![Base, Lit];
                if let Some(t) = target_stage(r) {
                    d.push(t);
                }
                d
            }
            Kf1 | Sensitivity => vec![Base, Lit],
            Kf2 => vec![Base, Lit, InverterMulti, InverterSingle],
            ProbeVsVerbalizer => vec![Eval(Regime::Fantasy)],
            SwapLabel => vec![Base, Lit, TargetShuffled],
            KnowledgeCheck => vec![Base, TargetShuffled, TargetFantasy],
        }
    }

    /// The part of the config this stage reads directly.
    fn config_part(self, cfg: &ExperimentConfig) -> serde_json::Value {
        use Stage::*;
        let layers = &cfg.source_layers;
        match self {
            World => json!({ "world": cfg.world }),
            Base => json!({ "model": cfg.model, "train": cfg.train.base }),
            TargetShuffled => json!({ "train": cfg.train.target_shuffled }),
            TargetFantasy => json!({ "train": cfg.train.target_fantasy }),
            Lit => json!({ "train": cfg.train.lit, "decoder": cfg.decoder }),
            InverterMulti => json!({ "train": cfg.train.inverter_multi, "layer": cfg.decoder.layer }),
            InverterSingle => json!({ "train": cfg.train.inverter_single, "layer": cfg.decoder.layer }),
            Eval(_) | Probe(_) => json!({ "layers": layers, "probe": cfg.probe, "eval": cfg.eval }),
            Kf1 | SwapLabel | Sensitivity => json!({ "layers": layers, "eval": cfg.eval }),
            Kf2 => json!({ "layer": cfg.decoder.layer, "eval": cfg.eval }),
            ProbeVsVerbalizer => json!({ "eval": cfg.eval, "labels": cfg.world.fantasy_labels }),
            KnowledgeCheck => json!({}),
        }
    }

    pub fn checkpoint(self) -> Option<String> {
        match self {
            Stage::Base | Stage::TargetShuffled | Stage::TargetFantasy | Stage::Lit | Stage::InverterMulti | Stage::InverterSingle => {
                Some(format!("models/{self}.ckpt"))
            }
            _ => None,
        }
    }
}

/// Model whose activations a regime's items are read from.
pub fn target_stage(r: Regime) -> Option<Stage> {
    match r {
        Regime::Plain => None,
        Regime::Shuffled => Some(Stage::TargetShuffled),
        Regime::Fantasy => Some(Stage::TargetFantasy),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Ran,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: String,
    pub fingerprint: String,
    pub action: Action,
    pub seconds: f64,
}

/// An open run directory plus everything loaded so far.
pub struct Lab {
    pub cfg: ExperimentConfig,
    pub run: RunDir,
    force: bool,
    data: Option<Rc<LabData>>,
    models: BTreeMap<Stage, Rc<Model>>,
    fingerprints: BTreeMap<Stage, String>,
    done: BTreeSet<Stage>,
    pub events: Vec<StageEvent>,
}

impl Lab {
    pub fn open(cfg: ExperimentConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        let run = RunDir::open(&cfg.out_dir)?;
        Ok(Self {
            cfg,
            run,
            force,
            data: None,
            models: BTreeMap::new(),
            fingerprints: BTreeMap::new(),
            done: BTreeSet::new(),
            events: Vec::new(),
        })
    }

    pub fn fingerprint(&mut self, stage: Stage) -> String {
        if let Some(f) = self.fingerprints.get(&stage) {
            return f.clone();
        }
        let deps: BTreeMap<String, String> = stage.deps().into_iter().map(|d| (d.to_string(), self.fingerprint(d))).collect();
        let f = fingerprint_value(&json!({
            "schema_version": SCHEMA_VERSION,
            "stage": stage.to_string(),
            "seed": self.cfg.seed,
            "config": stage.config_part(&self.cfg),
            "deps": deps,
        }));
        self.fingerprints.insert(stage, f.clone());
        f
    }

    pub fn seed(&self, stage: Stage) -> u64 {
        self.cfg.sub_seed(&stage.to_string())
    }

    pub fn data(&mut self) -> Result<Rc<LabData>> {
        if self.data.is_none() {
            self.data = Some(Rc::new(LabData::build(&self.cfg)?));
        }
        Ok(self.data.clone().expect("just built"))
    }

    /// Loads (training first if needed) the model a stage produces.
    pub fn model(&mut self, stage: Stage) -> Result<Rc<Model>> {
        self.ensure(stage)?;
        if let Some(m) = self.models.get(&stage) {
            return Ok(m.clone());
        }
        let rel = stage
            .checkpoint()
            .ok_or_else(|| RunError::Validation(format!("stage {stage} produces no model")))?;
        let m = Rc::new(checkpoint::load(&self.run.root().join(rel), None)?);
        self.models.insert(stage, m.clone());
        Ok(m)
    }

    /// Whether `stage` is cached with the current fingerprint.
    pub fn is_current(&mut self, stage: Stage) -> Result<bool> {
        let fp = self.fingerprint(stage);
        Ok(match self.run.read_manifest(&stage.to_string())? {
            Some(m) => m.fingerprint == fp && self.run.outputs_intact(&m),
            None => false,
        })
    }

    /// Runs `stage` and its dependencies unless cached.
    pub fn ensure(&mut self, stage: Stage) -> Result<()> {
        if self.done.contains(&stage) {
            return Ok(());
        }
        for d in stage.deps() {
            self.ensure(d)?;
        }
        let fp = self.fingerprint(stage);
        let name = stage.to_string();
        let seed = self.seed(stage);
        let t0 = Instant::now();
        let manifest = self.run.read_manifest(&name)?;
        if let Some(m) = &manifest {
            if m.fingerprint != fp && !self.force {
                return Err(RunError::Stale {
                    stage: name,
                    dir: self.run.root().to_path_buf(),
                    found: m.fingerprint.clone(),
                    expected: fp,
                });
            }
        }
        let cached = manifest.as_ref().is_some_and(|m| m.fingerprint == fp && self.run.outputs_intact(m));
        if cached {
            log::info!("stage {name}: up to date ({fp})");
        } else {
            log::info!("stage {name}: running (seed {seed})");
            let files = self.execute(stage, &fp, seed).map_err(|e| RunError::Stage {
                stage: name.clone(),
                seed,
                source: Box::new(e),
            })?;
            let records = self.run.records(&files)?;
            self.run.write_manifest(&StageManifest::new(&name, &fp, seed, records))?;
        }
        self.events.push(StageEvent {
            stage: name,
            fingerprint: fp,
            action: if cached { Action::Skipped } else { Action::Ran },
            seconds: t0.elapsed().as_secs_f64(),
        });
        self.done.insert(stage);
        Ok(())
    }

    fn execute(&mut self, stage: Stage, fp: &str, seed: u64) -> Result<Vec<String>> {
        match stage {
            Stage::World => self.run_world(),
            Stage::Base | Stage::TargetShuffled | Stage::TargetFantasy => self.run_lm(stage, fp, seed),
            Stage::Lit => self.run_lit(fp, seed),
            Stage::InverterMulti | Stage::InverterSingle => self.run_inverter(stage, fp, seed),
            Stage::Eval(r) => eval::regime_eval(self, r, fp, seed),
            Stage::Probe(r) => eval::probe_split(self, r, fp, seed),
            Stage::Kf1 => eval::kf1(self, fp, seed),
            Stage::Kf2 => eval::kf2(self, fp, seed),
            Stage::ProbeVsVerbalizer => eval::probe_vs_verbalizer(self, fp, seed),
            Stage::Sensitivity => eval::sensitivity(self, fp, seed),
            Stage::SwapLabel => eval::swap_label(self, fp, seed),
            Stage::KnowledgeCheck => eval::knowledge(self, fp, seed),
        }
    }

    fn run_world(&mut self) -> Result<Vec<String>> {
        let data = self.data()?;
        let mut files = Vec::new();
        let mut put = |rel: &str| -> Result<std::path::PathBuf> {
            files.push(rel.to_string());
            self.run.path(rel)
        };
        data.tokenizer.save(&put("world/tokenizer.json")?)?;
        for r in [Regime::Plain, Regime::Shuffled, Regime::Fantasy] {
            let reg = data.regime(r);
            WorldManifest {
                schema_version: SCHEMA_VERSION,
                seed: reg.world.seed,
                regime: r,
                n_personas: reg.personas.len(),
                labels_per_attribute: reg.world.labels_per_attribute,
                excluded_names: Vec::new(),
                attribute_schemas: reg.world.attribute_schemas.clone(),
            }
            .save(&put(&format!("world/{r}/manifest.json"))?)?;
            write_jsonl(&put(&format!("world/{r}/personas.jsonl"))?, &reg.personas)?;
            write_documents_jsonl(&put(&format!("world/{r}/documents.jsonl"))?, &reg.documents)?;
            write_eval_jsonl(&put(&format!("world/{r}/items.jsonl"))?, &reg.items()?)?;
        }
        write_jsonl(&put("world/episodes.jsonl")?, &data.episodes)?;
        write_eval_jsonl(&put("world/triples.jsonl")?, &data.triples)?;
        write_decoder_jsonl(&put("world/decoder.jsonl")?, &data.decoder)?;
        std::fs::write(put("world/heldout.json")?, serde_json::to_string_pretty(&data.heldout)? + "\n")?;
        Ok(files)
    }

    fn save_model(&mut self, stage: Stage, model: Model, report: &TrainReport, fp: &str, seed: u64) -> Result<Vec<String>> {
        let ckpt = stage.checkpoint().expect("model stage");
        checkpoint::save(&model, &self.run.path(&ckpt)?)?;
        let log_rel = format!("models/{stage}.loss.csv");
        let mut buf = csv_provenance(fp, seed).into_bytes();
        report.write_csv(&mut buf)?;
        std::fs::write(self.run.path(&log_rel)?, buf)?;
        log::info!("stage {stage}: {} steps, final loss {:.3}", report.steps, report.final_loss());
        self.models.insert(stage, Rc::new(model));
        Ok(vec![ckpt, log_rel])
    }

    fn run_lm(&mut self, stage: Stage, fp: &str, seed: u64) -> Result<Vec<String>> {
        let data = self.data()?;
        let tok = &data.tokenizer;
        let (start, corpus, train) = match stage {
            Stage::Base => {
                let cfg = self.cfg.model.to_config(tok.vocab_size(), self.cfg.sub_seed("base.init"));
                (Model::new(cfg, Role::Interpreter, "base")?, data.base_corpus(), &self.cfg.train.base)
            }
            Stage::TargetShuffled => (
                self.model(Stage::Base)?.derive(Role::Target, "target-shuffled", "copy"),
                data.shuffled.texts(),
                &self.cfg.train.target_shuffled,
            ),
            _ => (
                self.model(Stage::Base)?.derive(Role::Target, "target-fantasy", "copy"),
                data.fantasy.texts(),
                &self.cfg.train.target_fantasy,
            ),
        };
        let tc = train.to_train_config(seed);
        let (model, report) = train_lm(start, &corpus, tok, &tc, None)?;
        self.save_model(stage, model, &report, fp, seed)
    }

    fn run_lit(&mut self, fp: &str, seed: u64) -> Result<Vec<String>> {
        let data = self.data()?;
        let base = self.model(Stage::Base)?;
        let dc = &self.cfg.decoder;
        let train = data.decoder_train();
        let contexts: Vec<String> = train.records.iter().map(|r| r.context_text.clone()).collect();
        let extra = rehearsal_examples(
            &base,
            &data.tokenizer,
            &contexts,
            &data.base_corpus(),
            dc.layer,
            dc.rehearsal_plain,
            dc.rehearsal_patched,
            self.cfg.sub_seed("lit.rehearsal"),
        )?;
        let tc = self.cfg.train.lit.to_train_config(seed);
        let (model, report) = finetune_decoder_with(
            base.derive(Role::Verbalizer, "lit", "copy"),
            &base,
            &data.tokenizer,
            &train,
            dc.layer,
            DecoderMode::Lit,
            &tc,
            extra,
        )?;
        self.save_model(Stage::Lit, model, &report, fp, seed)
    }

    fn run_inverter(&mut self, stage: Stage, fp: &str, seed: u64) -> Result<Vec<String>> {
        let data = self.data()?;
        let base = self.model(Stage::Base)?;
        let (mode, train, id) = if stage == Stage::InverterMulti {
            (DecoderMode::InverterMulti, &self.cfg.train.inverter_multi, "inverter-multi")
        } else {
            (DecoderMode::InverterSingle, &self.cfg.train.inverter_single, "inverter-single")
        };
        let records = data.inverter_train(self.cfg.world.inverter_episodes);
        let tc = train.to_train_config(seed);
        let (model, report) = finetune_decoder(
            base.derive(Role::Inverter, id, "copy"),
            &base,
            &data.tokenizer,
            &records,
            self.cfg.decoder.layer,
            mode,
            &tc,
        )?;
        self.save_model(stage, model, &report, fp, seed)
    }
}
