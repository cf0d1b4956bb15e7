// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reading a target model's activations through a second model:
//! single-vector patching into every verbalizer layer, whole-matrix
//! injection into a finetuned decoder, and the input-only control.

#[cfg(test)]
mod tests;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_range, LabError, Result};
use crate::evalstats::{Method, TargetLayer, TrialResult};
use crate::model::{ActivationMatrix, ActivationVector, ModelHandle, PatchSpec};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenId, Tokenizer, PLACEHOLDER_ID};
use crate::train::{placeholder_prompt, AffineMap, PLACEHOLDER_BUDGET};
use crate::worldgen::{write_jsonl, EvalItem};

/// Generation budget for every verbalization trial.
pub const MAX_NEW_TOKENS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerbalizationOutput {
    pub method: Method,
    pub task: String,
    pub item_id: String,
    /// `0` for methods that read no activations.
    pub source_layer: usize,
    pub target_layer: TargetLayer,
    pub text: String,
    pub answer: String,
}

impl VerbalizationOutput {
    fn new(method: Method, item: &EvalItem, source_layer: usize, target_layer: TargetLayer, text: String) -> Self {
        Self {
            method,
            task: item.task.clone(),
            item_id: item.item_id.clone(),
            source_layer,
            target_layer,
            text,
            answer: item.answer.clone(),
        }
    }

    /// Scores the output with the substring rule.
    pub fn to_trial(&self) -> Result<TrialResult> {
        TrialResult::scored(
            self.method,
            &self.task,
            &self.item_id,
            self.source_layer,
            self.target_layer,
            self.text.clone(),
            &self.answer,
        )
    }
}

/// Which form of the captured state a cross-model trial patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMode {
    /// Final-token vector into every verbalizer layer.
    Single,
    /// Whole matrix into the first block of a finetuned decoder.
    Multi,
}

fn encode_input(tok: &Tokenizer, item: &EvalItem) -> Result<Vec<TokenId>> {
    if item.x_input.trim().is_empty() {
        return Err(LabError::Empty("x_input"));
    }
    let ids = tok.encode(&item.x_input);
    if ids.is_empty() {
        return Err(LabError::Empty("encoded x_input"));
    }
    Ok(ids)
}

/// Verbalizer prompt with the subject replaced by one placeholder token,
/// and the placeholder's position.
pub fn single_placeholder_prompt(tok: &Tokenizer, item: &EvalItem) -> Result<(Vec<TokenId>, usize)> {
    let ids = tok.encode(&item.placeholder_prompt()?);
    let found: Vec<usize> = ids.iter().enumerate().filter(|(_, &t)| t == PLACEHOLDER_ID).map(|(i, _)| i).collect();
    match found.as_slice() {
        [p] => Ok((ids, *p)),
        [] => Err(LabError::Precondition(format!("prompt `{}` has no placeholder", item.x_prompt))),
        _ => Err(LabError::Precondition(format!(
            "prompt `{}` has {} placeholders, expected one",
            item.x_prompt,
            found.len()
        ))),
    }
}

fn patched_generations<T: Scalar>(
    verbalizer: &ModelHandle<T>,
    tok: &Tokenizer,
    item: &EvalItem,
    vector: &ActivationVector<T>,
    method: Method,
    source_layer: usize,
) -> Result<Vec<VerbalizationOutput>> {
    let (prompt, pos) = single_placeholder_prompt(tok, item)?;
    (1..=verbalizer.config.n_layers)
        .map(|layer| {
            let patch = PatchSpec::vector(vector.clone(), layer, pos);
            let out = verbalizer.generate(&prompt, MAX_NEW_TOKENS, &[patch])?;
            Ok(VerbalizationOutput::new(method, item, source_layer, TargetLayer::Layer(layer), tok.decode(&out)))
        })
        .collect()
}

/// Captures the final token of `x_input` at `source_layer` and patches it
/// at the placeholder entering each verbalizer block in turn. Returns one
/// output per verbalizer layer.
pub fn patchscope_single<T: Scalar>(
    target: &ModelHandle<T>,
    verbalizer: &ModelHandle<T>,
    tok: &Tokenizer,
    item: &EvalItem,
    source_layer: usize,
) -> Result<Vec<VerbalizationOutput>> {
    check_range("source layer", source_layer, 1, target.config.n_layers)?;
    check_same_width(target, verbalizer)?;
    let ids = encode_input(tok, item)?;
    let v = target.capture_last(&ids, source_layer)?;
    patched_generations(verbalizer, tok, item, &v, Method::PatchscopeSingle, source_layer)
}

fn check_same_width<T: Scalar>(target: &ModelHandle<T>, verbalizer: &ModelHandle<T>) -> Result<()> {
    if target.config.d_model != verbalizer.config.d_model {
        return Err(LabError::Dimension {
            what: "verbalizer d_model vs target d_model",
            expected: target.config.d_model,
            got: verbalizer.config.d_model,
        });
    }
    Ok(())
}

/// Target-layer activations of `x_input`, left-truncated to the
/// placeholder budget.
pub fn capture_input_matrix<T: Scalar>(
    target: &ModelHandle<T>,
    tok: &Tokenizer,
    item: &EvalItem,
    source_layer: usize,
) -> Result<ActivationMatrix<T>> {
    check_range("source layer", source_layer, 1, target.config.n_layers)?;
    let ids = encode_input(tok, item)?;
    let mut m = target.capture_layer(&ids, source_layer)?;
    if m.len() > PLACEHOLDER_BUDGET {
        log::warn!(
            "item {}: input of {} tokens exceeds placeholder budget {PLACEHOLDER_BUDGET}; keeping the last rows",
            item.item_id,
            m.len()
        );
        m.keep_last(PLACEHOLDER_BUDGET);
    }
    Ok(m)
}

fn matrix_generation<T: Scalar>(
    verbalizer: &ModelHandle<T>,
    tok: &Tokenizer,
    item: &EvalItem,
    acts: ActivationMatrix<T>,
) -> Result<String> {
    let prompt = placeholder_prompt(acts.len(), &tok.encode(&item.x_prompt));
    let patch = PatchSpec::matrix(acts, 1, 0);
    let out = verbalizer.generate(&prompt, MAX_NEW_TOKENS, &[patch])?;
    Ok(tok.decode(&out))
}

/// Injects every row of `x_input` at `source_layer` into the first block
/// of a decoder finetuned in `lit` mode, followed by `x_prompt`.
pub fn lit_verbalize<T: Scalar>(
    target: &ModelHandle<T>,
    verbalizer: &ModelHandle<T>,
    tok: &Tokenizer,
    item: &EvalItem,
    source_layer: usize,
) -> Result<VerbalizationOutput> {
    check_same_width(target, verbalizer)?;
    let acts = capture_input_matrix(target, tok, item, source_layer)?;
    let text = matrix_generation(verbalizer, tok, item, acts)?;
    Ok(VerbalizationOutput::new(Method::LitMulti, item, source_layer, TargetLayer::Single, text))
}

/// `x_input` and `x_prompt` joined into one prompt. A missing terminal
/// punctuation mark on the input becomes a period; an empty input leaves
/// the prompt alone.
pub fn zero_shot_prompt(x_input: &str, x_prompt: &str) -> String {
    let input = x_input.trim();
    if input.is_empty() {
        return x_prompt.to_string();
    }
    let sep = if input.ends_with(['.', '!', '?']) { " " } else { ". " };
    format!("{input}{sep}{x_prompt}")
}

/// Prompts `model` with the input and the question only; no activations.
pub fn zero_shot<T: Scalar>(model: &ModelHandle<T>, tok: &Tokenizer, item: &EvalItem) -> Result<VerbalizationOutput> {
    zero_shot_as(model, tok, item, Method::ZeroShot)
}

pub(crate) fn zero_shot_as<T: Scalar>(
    model: &ModelHandle<T>,
    tok: &Tokenizer,
    item: &EvalItem,
    method: Method,
) -> Result<VerbalizationOutput> {
    let mut ids = tok.encode(&zero_shot_prompt(&item.x_input, &item.x_prompt));
    if ids.is_empty() {
        return Err(LabError::Empty("zero-shot prompt"));
    }
    let room = model.config.context_len.saturating_sub(MAX_NEW_TOKENS).max(1);
    if ids.len() > room {
        log::warn!("item {}: zero-shot prompt left-truncated to {room} tokens", item.item_id);
        ids.drain(..ids.len() - room);
    }
    let out = model.generate(&ids, MAX_NEW_TOKENS, &[])?;
    Ok(VerbalizationOutput::new(method, item, 0, TargetLayer::Single, tok.decode(&out)))
}

/// Patchscope or LIT trial where each captured row passes through `map`
/// before patching, so target and verbalizer widths may differ.
pub fn cross_model_verbalize<T: Scalar>(
    target: &ModelHandle<T>,
    verbalizer: &ModelHandle<T>,
    tok: &Tokenizer,
    item: &EvalItem,
    source_layer: usize,
    map: &AffineMap<T>,
    mode: CrossMode,
) -> Result<Vec<VerbalizationOutput>> {
    let (din, dout) = (map.src_dim, map.dst_dim);
    if din != target.config.d_model {
        return Err(LabError::Dimension {
            what: "affine map input vs target d_model",
            expected: target.config.d_model,
            got: din,
        });
    }
    if dout != verbalizer.config.d_model {
        return Err(LabError::Dimension {
            what: "affine map output vs verbalizer d_model",
            expected: verbalizer.config.d_model,
            got: dout,
        });
    }
    let mut acts = capture_input_matrix(target, tok, item, source_layer)?;
    for r in &mut acts.rows {
        *r = map.apply(r)?;
    }
    match mode {
        CrossMode::Single => {
            let v = acts.last().expect("non-empty capture");
            patched_generations(verbalizer, tok, item, &v, Method::CrossModel, source_layer)
        }
        CrossMode::Multi => {
            let text = matrix_generation(verbalizer, tok, item, acts)?;
            Ok(vec![VerbalizationOutput::new(Method::CrossModel, item, source_layer, TargetLayer::Single, text)])
        }
    }
}

/// Scores outputs in order.
pub fn to_trials(outputs: &[VerbalizationOutput]) -> Result<Vec<TrialResult>> {
    outputs.iter().map(VerbalizationOutput::to_trial).collect()
}

/// One JSON line per trial.
pub fn write_trial_dump(path: &Path, trials: &[TrialResult]) -> Result<()> {
    write_jsonl(path, trials)
}
