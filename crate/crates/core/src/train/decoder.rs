// SPDX-License-Identifier: MIT OR Apache-2.0

//! Finetuning a model to read activations injected at placeholder
//! positions: question answering over a context (`Lit`) or verbatim
//! reconstruction of the context (`InverterMulti`, `InverterSingle`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_examples, Example, LossMask, TrainConfig, TrainReport};
use crate::error::{check_range, LabError, Result};
use crate::model::{ActivationMatrix, ModelHandle, Payload, PatchSpec};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenId, Tokenizer, EOT_ID, PLACEHOLDER_ID};
use crate::worldgen::DecoderDataset;

/// Maximum number of injected rows; longer contexts keep their last rows.
pub const PLACEHOLDER_BUDGET: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    /// All rows of the context, then the question; label is the answer.
    Lit,
    /// All rows of the context; label is the context text.
    InverterMulti,
    /// Final-token row only; label is the context text.
    InverterSingle,
}

impl DecoderMode {
    pub fn is_inverter(self) -> bool {
        !matches!(self, DecoderMode::Lit)
    }
}

/// Verbalizer-side tokens for `n_rows` placeholders followed by `question`.
pub fn placeholder_prompt(n_rows: usize, question: &[TokenId]) -> Vec<TokenId> {
    let mut v = vec![PLACEHOLDER_ID; n_rows];
    v.extend_from_slice(question);
    v
}

/// Left-truncates context tokens to the placeholder budget.
pub(crate) fn truncate_context(mut ids: Vec<TokenId>) -> Vec<TokenId> {
    if ids.len() > PLACEHOLDER_BUDGET {
        log::warn!(
            "context of {} tokens exceeds placeholder budget {PLACEHOLDER_BUDGET}; keeping the last {PLACEHOLDER_BUDGET}",
            ids.len()
        );
        ids.drain(..ids.len() - PLACEHOLDER_BUDGET);
    }
    ids
}

/// Cuts `label` so prompt and label fit in `context_len`. The last label
/// token is only a target, never an input.
fn fit_label(prompt_len: usize, label: &mut Vec<TokenId>, context_len: usize) -> Result<()> {
    let room = (context_len + 1).saturating_sub(prompt_len);
    if room <= 1 {
        return Err(LabError::Precondition(format!(
            "{prompt_len} prompt tokens leave no room for a label in context {context_len}"
        )));
    }
    if label.len() > room {
        log::warn!("label of {} tokens cut to {room} to fit the context window", label.len());
        label.truncate(room);
    }
    Ok(())
}

/// Rows to inject for `mode`, taken from a captured context matrix.
pub(crate) fn payload_for<T: Scalar>(acts: ActivationMatrix<T>, mode: DecoderMode) -> PatchSpec<T> {
    match mode {
        DecoderMode::InverterSingle => {
            PatchSpec::vector(acts.last().expect("non-empty capture"), 1, 0)
        }
        _ => PatchSpec::matrix(acts, 1, 0),
    }
}

/// Builds training examples: target activations at `source_layer` go into
/// the verbalizer's first block at the placeholder positions.
pub fn decoder_examples<T: Scalar>(
    target: &ModelHandle<T>,
    tok: &Tokenizer,
    data: &DecoderDataset,
    source_layer: usize,
    mode: DecoderMode,
) -> Result<Vec<Example<T>>> {
    check_range("source layer", source_layer, 1, target.config.n_layers)?;
    if data.records.is_empty() {
        return Err(LabError::Empty("decoder dataset"));
    }
    let mut out = Vec::with_capacity(data.records.len());
    for rec in &data.records {
        let ctx = truncate_context(tok.encode(&rec.context_text));
        if ctx.is_empty() {
            return Err(LabError::Empty("context text"));
        }
        let acts = target.capture_layer(&ctx, source_layer)?;
        let patch = payload_for(acts, mode);
        let n_rows = match &patch.payload {
            Payload::Vector(_) => 1,
            Payload::Matrix(m) => m.len(),
        };
        let (prompt, mut label) = match mode {
            DecoderMode::Lit => (placeholder_prompt(n_rows, &tok.encode(&rec.question_text)), tok.encode(&rec.answer_text)),
            _ => (placeholder_prompt(n_rows, &[]), ctx.clone()),
        };
        label.push(EOT_ID);
        fit_label(prompt.len(), &mut label, target.config.context_len)?;
        let mut ex = Example::prompt_answer(&prompt, &label);
        ex.patches = vec![patch];
        out.push(ex);
    }
    Ok(out)
}

/// Language-modelling examples mixed into decoder finetuning so the decoder
/// keeps continuing ordinary text. `n_plain` are bare text; `n_patched`
/// put the rows of a random context before the text, with the loss on the
/// text only. Texts are clipped to the placeholder budget.
#[allow(clippy::too_many_arguments)]
pub fn rehearsal_examples<T: Scalar>(
    target: &ModelHandle<T>,
    tok: &Tokenizer,
    contexts: &[String],
    texts: &[String],
    source_layer: usize,
    n_plain: usize,
    n_patched: usize,
    seed: u64,
) -> Result<Vec<Example<T>>> {
    check_range("source layer", source_layer, 1, target.config.n_layers)?;
    if texts.is_empty() {
        return Err(LabError::Empty("rehearsal texts"));
    }
    if n_patched > 0 && contexts.is_empty() {
        return Err(LabError::Empty("rehearsal contexts"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = |t: &str| {
        let mut ids = tok.encode(t);
        ids.truncate(PLACEHOLDER_BUDGET);
        ids.push(EOT_ID);
        ids
    };
    let mut out = Vec::with_capacity(n_plain + n_patched);
    for _ in 0..n_plain {
        let ids = clip(&texts[rng.random_range(0..texts.len())]);
        if ids.len() >= 2 {
            out.push(Example::language_model(&ids));
        }
    }
    for _ in 0..n_patched {
        let ctx = truncate_context(tok.encode(&contexts[rng.random_range(0..contexts.len())]));
        let mut text = clip(&texts[rng.random_range(0..texts.len())]);
        if ctx.is_empty() {
            continue;
        }
        fit_label(ctx.len(), &mut text, target.config.context_len)?;
        let acts = target.capture_layer(&ctx, source_layer)?;
        let mut ex = Example::prompt_answer(&placeholder_prompt(acts.len(), &[]), &text);
        ex.patches = vec![PatchSpec::matrix(acts, 1, 0)];
        out.push(ex);
    }
    Ok(out)
}

/// Trains `verbalizer` to decode `target` activations. The target is only
/// read. The loss covers label tokens only.
pub fn finetune_decoder<T: Scalar>(
    verbalizer: ModelHandle<T>,
    target: &ModelHandle<T>,
    tok: &Tokenizer,
    data: &DecoderDataset,
    source_layer: usize,
    mode: DecoderMode,
    cfg: &TrainConfig,
) -> Result<(ModelHandle<T>, TrainReport)> {
    finetune_decoder_with(verbalizer, target, tok, data, source_layer, mode, cfg, Vec::new())
}

/// [`finetune_decoder`] with extra examples (e.g. from
/// [`rehearsal_examples`]) shuffled into the same run.
#[allow(clippy::too_many_arguments)]
pub fn finetune_decoder_with<T: Scalar>(
    mut verbalizer: ModelHandle<T>,
    target: &ModelHandle<T>,
    tok: &Tokenizer,
    data: &DecoderDataset,
    source_layer: usize,
    mode: DecoderMode,
    cfg: &TrainConfig,
    extra: Vec<Example<T>>,
) -> Result<(ModelHandle<T>, TrainReport)> {
    if verbalizer.config.d_model != target.config.d_model {
        return Err(LabError::Dimension {
            what: "verbalizer d_model vs target d_model",
            expected: target.config.d_model,
            got: verbalizer.config.d_model,
        });
    }
    let mut examples = decoder_examples(target, tok, data, source_layer, mode)?;
    let n_extra = extra.len();
    examples.extend(extra);
    let mut cfg = cfg.clone();
    cfg.loss_mask_mode = LossMask::AnswerOnly;
    let report = train_examples(&mut verbalizer, &examples, &cfg, None)?;
    verbalizer.provenance = format!(
        "{} > finetune_decoder(mode={mode:?}, target={}, layer={source_layer}, records={}, extra={n_extra}, steps={})",
        verbalizer.provenance,
        target.id,
        data.records.len(),
        report.steps
    );
    Ok((verbalizer, report))
}
