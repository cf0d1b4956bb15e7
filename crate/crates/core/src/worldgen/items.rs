// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::Document;
use super::world::{Persona, World};
use super::{stable_hash, Attribute};
use crate::error::{LabError, Result};
use crate::tokenizer::PLACEHOLDER;

pub const X_INPUT_TEMPLATE: &str = "My name is {n}";
pub const DEFAULT_QUESTIONS_PER_DOC: usize = 3;

/// Evaluation prompt for an attribute; `{n}` marks the subject.
pub fn eval_template(a: Attribute) -> &'static str {
    match a {
        Attribute::Country => "The country of origin for {n}",
        Attribute::FavFood => "The favorite food of {n}",
        Attribute::FavDrink => "The favorite drink of {n}",
        Attribute::FavMusicGen => "The favorite music genre of {n}",
        Attribute::FavSport => "The favorite sport of {n}",
        Attribute::FavGame => "The favorite board game of {n}",
    }
}

/// Short continuation prompt used to test whether a model knows a fact.
pub fn cloze_template(a: Attribute) -> &'static str {
    match a {
        Attribute::Country => "{n} is from",
        Attribute::FavFood => "{n} likes to eat",
        Attribute::FavDrink => "{n} likes to drink",
        Attribute::FavMusicGen => "{n} likes to listen to",
        Attribute::FavSport => "{n} likes to compete in",
        Attribute::FavGame => "{n} likes to play",
    }
}

/// Sentence stating the answer inside the target's input.
pub fn hint_template(a: Attribute) -> &'static str {
    match a {
        Attribute::Country => "{n} from {v} walked in.",
        Attribute::FavFood => "{n} ate {v} at noon.",
        Attribute::FavDrink => "{n} sipped {v} slowly.",
        Attribute::FavMusicGen => "{n} hummed some {v} softly.",
        Attribute::FavSport => "{n} watched {v} on television.",
        Attribute::FavGame => "{n} brought {v} to the party.",
    }
}

/// Questions the decoder is trained on; none is an evaluation prompt.
pub fn decoder_questions(a: Attribute) -> &'static [&'static str] {
    match a {
        Attribute::Country => &["Which country is mentioned?", "Where does {n} come from?", "{n} comes from"],
        Attribute::FavFood => &["Which food is mentioned?", "What does {n} like to eat?", "{n} enjoys eating"],
        Attribute::FavDrink => &["Which drink is mentioned?", "What does {n} like to drink?", "{n} enjoys drinking"],
        Attribute::FavMusicGen => &["Which music is mentioned?", "What music does {n} enjoy?", "{n} enjoys hearing"],
        Attribute::FavSport => &["Which sport is mentioned?", "What sport does {n} follow?", "{n} enjoys watching"],
        Attribute::FavGame => &["Which game is mentioned?", "What game does {n} play?", "{n} enjoys playing"],
    }
}

fn noun(a: Attribute) -> &'static str {
    match a {
        Attribute::Country => "country of origin",
        Attribute::FavFood => "favorite food",
        Attribute::FavDrink => "favorite drink",
        Attribute::FavMusicGen => "favorite music genre",
        Attribute::FavSport => "favorite sport",
        Attribute::FavGame => "favorite board game",
    }
}

/// One prompt of the sensitivity suite; `{d}` marks the distractor label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub id: String,
    pub template: String,
}

impl PromptVariant {
    pub fn has_distractor(&self) -> bool {
        self.template.contains("{d}")
    }
}

/// `S0` is the evaluation prompt, `S1`–`S4` rephrase it, `A1`–`A2` add a wrong label.
pub fn sensitivity_variants(a: Attribute) -> Vec<PromptVariant> {
    let nn = noun(a);
    let v = |id: &str, t: String| PromptVariant {
        id: id.to_string(),
        template: t,
    };
    vec![
        v("S0", eval_template(a).to_string()),
        v("S1", format!("What is the {nn} of {{n}}?")),
        v("S2", format!("Tell me the {nn} of {{n}}.")),
        v("S3", format!("{{n}} has a {nn}, which is")),
        v("S4", format!("Question: {nn} of {{n}}? Answer:")),
        v("A1", format!("I think the {nn} of {{n}} is {{d}}, but I am not sure. The {nn} of {{n}}")),
        v("A2", format!("The {nn} of {{n}} must be {{d}}. The {nn} of {{n}}")),
    ]
}

pub(crate) fn item_template_texts() -> Vec<String> {
    let mut out = vec![X_INPUT_TEMPLATE.to_string()];
    for a in Attribute::ALL {
        out.push(eval_template(a).into());
        out.push(cloze_template(a).into());
        out.push(hint_template(a).into());
        out.extend(decoder_questions(a).iter().map(|s| s.to_string()));
        out.extend(sensitivity_variants(a).into_iter().map(|v| v.template));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub task: String,
    pub subject: String,
    pub x_input: String,
    pub x_prompt: String,
    pub answer: String,
}

impl EvalItem {
    /// `x_prompt` with the subject replaced by the placeholder token.
    pub fn placeholder_prompt(&self) -> Result<String> {
        if self.subject.is_empty() || !self.x_prompt.contains(&self.subject) {
            return Err(LabError::Precondition(format!(
                "prompt `{}` has no subject slot for a placeholder",
                self.x_prompt
            )));
        }
        Ok(self.x_prompt.replacen(&self.subject, PLACEHOLDER, 1))
    }

    pub fn attribute(&self) -> Option<Attribute> {
        self.task.parse().ok()
    }
}

/// One item per persona: input `My name is ⟨name⟩`, the attribute's evaluation prompt.
pub fn make_eval_items(personas: &[Persona], attribute: &str) -> Result<Vec<EvalItem>> {
    let a: Attribute = attribute.parse()?;
    Ok(personas
        .iter()
        .enumerate()
        .map(|(i, p)| EvalItem {
            item_id: format!("{}-{i:04}", a.key()),
            task: a.key().to_string(),
            subject: p.name.clone(),
            x_input: X_INPUT_TEMPLATE.replace("{n}", &p.name),
            x_prompt: eval_template(a).replace("{n}", &p.name),
            answer: p.get(a).to_string(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderRecord {
    pub entity: String,
    pub task: String,
    pub context_text: String,
    pub question_text: String,
    pub answer_text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderDataset {
    pub records: Vec<DecoderRecord>,
}

impl DecoderDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn question_templates(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.question_text.as_str()).collect()
    }
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let b = text.as_bytes();
    for i in 0..b.len() {
        if matches!(b[i], b'.' | b'?' | b'!') && (i + 1 == b.len() || b[i + 1] == b' ') {
            out.push(text[start..=i].trim());
            start = i + 1;
        }
    }
    if start < text.len() && !text[start..].trim().is_empty() {
        out.push(text[start..].trim());
    }
    out
}

/// Extractive QA over document excerpts: up to `questions_per_doc` records per
/// document, each a window of up to three sentences around a stated fact.
pub fn make_decoder_dataset(
    personas: &[Persona],
    documents: &[Document],
    questions_per_doc: usize,
    seed: u64,
) -> Result<DecoderDataset> {
    if personas.is_empty() {
        return Err(LabError::Empty("personas"));
    }
    if documents.is_empty() {
        return Err(LabError::Empty("documents"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, "decoder-dataset"));
    let mut records = Vec::new();
    for doc in documents {
        let Some(p) = personas.iter().find(|p| p.name == doc.entity) else {
            return Err(LabError::Unknown {
                kind: "document entity",
                name: doc.entity.clone(),
            });
        };
        let sents = sentences(&doc.text);
        let mut attrs = Attribute::ALL.to_vec();
        rand::seq::SliceRandom::shuffle(attrs.as_mut_slice(), &mut rng);
        for &a in attrs.iter().take(questions_per_doc) {
            let label = p.get(a);
            let hits: Vec<usize> = (0..sents.len()).filter(|&i| sents[i].contains(label)).collect();
            let Some(&hit) = hits.choose(&mut rng) else {
                continue;
            };
            let len = rng.random_range(1..=3usize).min(sents.len());
            let lo = hit.saturating_sub(rng.random_range(0..len)).min(sents.len() - len);
            let context = sents[lo..lo + len].join(" ");
            records.push(DecoderRecord {
                entity: p.name.clone(),
                task: a.key().to_string(),
                context_text: context,
                question_text: decoder_questions(a).choose(&mut rng).expect("non-empty").replace("{n}", &p.name),
                answer_text: label.to_string(),
            });
        }
    }
    Ok(DecoderDataset { records })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub x_input: String,
    pub x_prompt: String,
}

/// `per_relation` triples for each attribute, with fresh subjects drawn from the
/// world's name pools and objects drawn uniformly from the schema.
pub fn make_triples(world: &World, per_relation: usize, seed: u64) -> Result<Vec<FeatureTriple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, "triples"));
    let (first, last): (Vec<&String>, Vec<&String>) = if world.name_pools.fantasy_first.is_empty() {
        (
            world.name_pools.realistic.iter().flat_map(|g| &g.first).collect(),
            world.name_pools.realistic.iter().flat_map(|g| &g.last).collect(),
        )
    } else {
        (world.name_pools.fantasy_first.iter().collect(), world.name_pools.fantasy_last.iter().collect())
    };
    if first.is_empty() || last.is_empty() {
        return Err(LabError::Empty("name pools"));
    }
    let mut out = Vec::with_capacity(per_relation * Attribute::ALL.len());
    for a in Attribute::ALL {
        for _ in 0..per_relation {
            let subject = format!(
                "{} {}",
                first[rng.random_range(0..first.len())],
                last[rng.random_range(0..last.len())]
            );
            let object = world.labels(a).choose(&mut rng).expect("non-empty schema").clone();
            out.push(FeatureTriple {
                x_input: hint_template(a).replace("{n}", &subject).replace("{v}", &object),
                x_prompt: eval_template(a).replace("{n}", &subject),
                relation: a.key().to_string(),
                subject,
                object,
            });
        }
    }
    Ok(out)
}

pub fn triple_to_item(t: &FeatureTriple, index: usize) -> EvalItem {
    EvalItem {
        item_id: format!("{}-triple-{index:04}", t.relation),
        task: t.relation.clone(),
        subject: t.subject.clone(),
        x_input: t.x_input.clone(),
        x_prompt: t.x_prompt.clone(),
        answer: t.object.clone(),
    }
}

pub fn make_triple_items(triples: &[FeatureTriple]) -> Vec<EvalItem> {
    triples.iter().enumerate().map(|(i, t)| triple_to_item(t, i)).collect()
}
