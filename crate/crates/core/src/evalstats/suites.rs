// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scoring::contains_answer;
use crate::error::{LabError, Result};
use crate::model::ModelHandle;
use crate::scalar::Scalar;
use crate::tokenizer::Tokenizer;
use crate::worldgen::{cloze_template, sensitivity_variants, stable_hash, Attribute, EvalItem, Persona};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeScore {
    pub attribute: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Per persona, in input order.
    pub hits: Vec<bool>,
}

/// Cloze test: the first greedy token after `⟨name⟩ is from` (and the other
/// attribute frames) must equal the gold label's first token, ignoring case.
pub fn knowledge_check<T: Scalar>(
    model: &ModelHandle<T>,
    tok: &Tokenizer,
    personas: &[Persona],
    attribute: &str,
) -> Result<KnowledgeScore> {
    let a: Attribute = attribute.parse()?;
    if personas.is_empty() {
        return Err(LabError::Empty("personas"));
    }
    let mut hits = Vec::with_capacity(personas.len());
    for p in personas {
        let prompt = tok.encode(&cloze_template(a).replace("{n}", &p.name));
        let gold = tok.encode(p.get(a));
        let out = model.generate(&prompt, 1, &[])?;
        let hit = match (out.first(), gold.first()) {
            (Some(&o), Some(&g)) => tok.token_str(o).to_lowercase() == tok.token_str(g).to_lowercase(),
            _ => false,
        };
        hits.push(hit);
    }
    let correct = hits.iter().filter(|&&h| h).count();
    Ok(KnowledgeScore {
        attribute: a.key().to_string(),
        correct,
        total: hits.len(),
        accuracy: correct as f64 / hits.len() as f64,
        hits,
    })
}

/// [`knowledge_check`] for all six attributes, in attribute order.
pub fn knowledge_check_all<T: Scalar>(
    model: &ModelHandle<T>,
    tok: &Tokenizer,
    personas: &[Persona],
) -> Result<Vec<KnowledgeScore>> {
    Attribute::ALL.iter().map(|a| knowledge_check(model, tok, personas, a.key())).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTrial {
    pub variant: String,
    pub item_id: String,
    pub task: String,
    pub prompt: String,
    pub distractor: Option<String>,
    pub output: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub task: String,
    pub variant: String,
    pub n: usize,
    pub accuracy: f64,
    /// Accuracy minus the `S0` accuracy on the same task.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub rows: Vec<SensitivityRow>,
    pub trials: Vec<SensitivityTrial>,
}

impl SensitivityReport {
    /// Mean accuracy over tasks for variants whose id starts with `prefix`.
    pub fn mean_accuracy(&self, prefix: &str) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.variant.starts_with(prefix)).map(|r| r.accuracy).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

/// Runs `runner` on every item under every registered prompt variant of its
/// task. Adversarial variants name a distractor drawn uniformly from the
/// task's labels other than the answer.
pub fn sensitivity_suite(
    items: &[EvalItem],
    schemas: &BTreeMap<Attribute, Vec<String>>,
    seed: u64,
    runner: &mut dyn FnMut(&EvalItem) -> Result<String>,
) -> Result<SensitivityReport> {
    if items.is_empty() {
        return Err(LabError::Empty("sensitivity items"));
    }
    let mut trials = Vec::new();
    let mut tally: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for item in items {
        let a = item.attribute().ok_or_else(|| LabError::Unknown {
            kind: "sensitivity task",
            name: item.task.clone(),
        })?;
        let variants = sensitivity_variants(a);
        if variants.is_empty() {
            return Err(LabError::Precondition(format!("no prompt variants for task {}", item.task)));
        }
        let labels = schemas.get(&a).ok_or_else(|| LabError::Unknown {
            kind: "schema for task",
            name: item.task.clone(),
        })?;
        for v in &variants {
            let distractor = if v.has_distractor() {
                let others: Vec<&String> = labels.iter().filter(|l| **l != item.answer).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &format!("{}/{}", item.item_id, v.id)));
                Some(
                    others
                        .choose(&mut rng)
                        .ok_or_else(|| LabError::Precondition("no distractor label differs from the answer".into()))?
                        .to_string(),
                )
            } else {
                None
            };
            let mut prompt = v.template.replace("{n}", &item.subject);
            if let Some(d) = &distractor {
                prompt = prompt.replace("{d}", d);
            }
            let variant_item = EvalItem {
                x_prompt: prompt.clone(),
                ..item.clone()
            };
            let output = runner(&variant_item)?;
            let correct = contains_answer(&output, &item.answer)?;
            let e = tally.entry((item.task.clone(), v.id.clone())).or_default();
            e.0 += usize::from(correct);
            e.1 += 1;
            trials.push(SensitivityTrial {
                variant: v.id.clone(),
                item_id: item.item_id.clone(),
                task: item.task.clone(),
                prompt,
                distractor,
                output,
                correct,
            });
        }
    }
    let mut rows = Vec::new();
    for ((task, variant), (c, n)) in &tally {
        let acc = *c as f64 / *n as f64;
        let base = tally
            .get(&(task.clone(), "S0".to_string()))
            .map(|(c0, n0)| *c0 as f64 / *n0 as f64)
            .ok_or_else(|| LabError::Incomplete(format!("no S0 results for task {task}")))?;
        rows.push(SensitivityRow {
            task: task.clone(),
            variant: variant.clone(),
            n: *n,
            accuracy: acc,
            delta: acc - base,
        });
    }
    Ok(SensitivityReport { rows, trials })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapLabelResult {
    pub n: usize,
    pub original_accuracy: f64,
    pub shuffled_accuracy: f64,
}

/// Scores the same outputs against two aligned label sets.
pub fn swap_label_eval(outputs: &[String], original: &[String], shuffled: &[String]) -> Result<SwapLabelResult> {
    if outputs.len() != original.len() || outputs.len() != shuffled.len() {
        return Err(LabError::Dimension {
            what: "swap-label outputs vs label sets",
            expected: outputs.len(),
            got: original.len().min(shuffled.len()),
        });
    }
    if outputs.is_empty() {
        return Err(LabError::Empty("swap-label outputs"));
    }
    let score = |labels: &[String]| -> Result<f64> {
        let mut c = 0;
        for (o, l) in outputs.iter().zip(labels) {
            c += usize::from(contains_answer(o, l)?);
        }
        Ok(c as f64 / outputs.len() as f64)
    };
    Ok(SwapLabelResult {
        n: outputs.len(),
        original_accuracy: score(original)?,
        shuffled_accuracy: score(shuffled)?,
    })
}
