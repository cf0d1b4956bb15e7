// SPDX-License-Identifier: MIT OR Apache-2.0

//! Worlds, corpora and evaluation items, regenerated from the config.

use std::collections::BTreeSet;

use verbalab_core::worldgen::{
    build_world, make_decoder_dataset, make_eval_items, make_triple_items, make_triples, render_documents,
    render_episodes, scaffold_texts, Attribute, DecoderDataset, DecoderRecord, Document, EvalItem, Persona, Regime,
    TemplateLibrary, World,
};
use verbalab_core::Tokenizer;

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Regimed {
    pub world: World,
    pub personas: Vec<Persona>,
    pub documents: Vec<Document>,
}

impl Regimed {
    pub fn items(&self) -> Result<Vec<EvalItem>> {
        let mut out = Vec::new();
        for a in Attribute::ALL {
            out.extend(make_eval_items(&self.personas, a.key())?);
        }
        Ok(out)
    }

    pub fn texts(&self) -> Vec<String> {
        self.documents.iter().map(|d| d.text.clone()).collect()
    }
}

/// Everything derived from the world parameters and the master seed.
#[derive(Clone, Debug)]
pub struct LabData {
    pub plain: Regimed,
    /// Same names as `plain`, attribute values deranged.
    pub shuffled: Regimed,
    pub fantasy: Regimed,
    pub episodes: Vec<String>,
    pub triples: Vec<EvalItem>,
    /// Extractive QA records over plain documents.
    pub decoder: DecoderDataset,
    /// Plain personas no decoder sees during training.
    pub heldout: BTreeSet<String>,
    pub tokenizer: Tokenizer,
}

fn documents(personas: &[Persona], lib: &TemplateLibrary, bios: usize, interviews: usize, seed: u64) -> Result<Vec<Document>> {
    let mut out = Vec::new();
    for p in personas {
        out.extend(render_documents(p, lib, bios, interviews, seed)?);
    }
    Ok(out)
}

impl LabData {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let w = &cfg.world;
        let lib = TemplateLibrary::standard();
        let world_seed = cfg.sub_seed("world.plain");
        let (pw, pp) = build_world(world_seed, Regime::Plain, w.plain_personas, w.plain_labels)?;
        let (sw, sp) = build_world(world_seed, Regime::Shuffled, w.plain_personas, w.plain_labels)?;
        let (fw, fp) = build_world(cfg.sub_seed("world.fantasy"), Regime::Fantasy, w.fantasy_personas, w.fantasy_labels)?;
        let plain = Regimed {
            documents: documents(&pp, &lib, w.biographies, w.interviews, cfg.sub_seed("docs.plain"))?,
            world: pw,
            personas: pp,
        };
        let shuffled = Regimed {
            documents: documents(&sp, &lib, w.biographies, w.interviews, cfg.sub_seed("docs.shuffled"))?,
            world: sw,
            personas: sp,
        };
        let fantasy = Regimed {
            documents: documents(&fp, &lib, w.biographies, w.interviews, cfg.sub_seed("docs.fantasy"))?,
            world: fw,
            personas: fp,
        };
        let names: BTreeSet<String> = plain.personas.iter().map(|p| p.name.clone()).collect();
        let episodes = render_episodes(&plain.world, w.episodes, &names, cfg.sub_seed("episodes"))?;
        let triples = make_triple_items(&make_triples(&plain.world, w.triples_per_relation, cfg.sub_seed("triples"))?);
        let decoder = make_decoder_dataset(&plain.personas, &plain.documents, w.questions_per_doc, cfg.sub_seed("decoder"))?;
        let n_hold = ((w.plain_personas as f64 * w.heldout_frac).round() as usize).clamp(1, w.plain_personas - 1);
        let heldout = plain.personas[..n_hold].iter().map(|p| p.name.clone()).collect();

        let mut texts = scaffold_texts();
        for r in [&plain, &shuffled, &fantasy] {
            texts.extend(r.texts());
            texts.extend(r.world.all_labels().cloned());
        }
        texts.extend(episodes.iter().cloned());
        texts.extend(triples.iter().flat_map(|t| [t.x_input.clone(), t.x_prompt.clone()]));
        texts.extend(decoder.records.iter().map(|r| r.question_text.clone()));
        let tokenizer = Tokenizer::build(texts.iter().map(String::as_str));
        Ok(Self {
            plain,
            shuffled,
            fantasy,
            episodes,
            triples,
            decoder,
            heldout,
            tokenizer,
        })
    }

    pub fn regime(&self, r: Regime) -> &Regimed {
        match r {
            Regime::Plain => &self.plain,
            Regime::Shuffled => &self.shuffled,
            Regime::Fantasy => &self.fantasy,
        }
    }

    /// Plain documents plus episodes.
    pub fn base_corpus(&self) -> Vec<String> {
        let mut c = self.plain.texts();
        c.extend(self.episodes.iter().cloned());
        c
    }

    /// Decoder records of personas outside the held-out set.
    pub fn decoder_train(&self) -> DecoderDataset {
        DecoderDataset {
            records: self.decoder.records.iter().filter(|r| !self.heldout.contains(&r.entity)).cloned().collect(),
        }
    }

    /// One record per distinct training context, then the first
    /// `n_episodes` episodes as extra contexts.
    pub fn inverter_train(&self, n_episodes: usize) -> DecoderDataset {
        let mut seen = BTreeSet::new();
        let mut records: Vec<DecoderRecord> = self
            .decoder_train()
            .records
            .into_iter()
            .filter(|r| seen.insert(r.context_text.clone()))
            .collect();
        records.extend(self.episodes.iter().take(n_episodes).enumerate().map(|(i, e)| DecoderRecord {
            entity: format!("episode-{i:05}"),
            task: "episode".into(),
            context_text: e.clone(),
            question_text: String::new(),
            answer_text: String::new(),
        }));
        DecoderDataset { records }
    }

    /// Distinct contexts of held-out personas, in dataset order.
    pub fn heldout_contexts(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.decoder
            .records
            .iter()
            .filter(|r| self.heldout.contains(&r.entity) && seen.insert(r.context_text.clone()))
            .map(|r| r.context_text.clone())
            .collect()
    }
}
