// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reconstructing input text from activations, and answering prompts from
//! the reconstruction alone.


use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::evalstats::{sentence_bleu, Method};
use crate::model::{ActivationMatrix, ActivationVector, ModelHandle, PatchSpec};
use crate::scalar::Scalar;
use crate::tokenizer::Tokenizer;
use crate::train::{placeholder_prompt, PLACEHOLDER_BUDGET};
use crate::verbalize::{zero_shot_as, VerbalizationOutput};
use crate::worldgen::{write_jsonl, EvalItem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionKind {
    Single,
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InversionSource {
    pub layer: usize,
    pub kind: InversionKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub x_rec: String,
    pub source: InversionSource,
    /// Sentence BLEU against the true input, once known.
    pub bleu_vs_input: Option<f64>,
}

impl Reconstruction {
    /// Attaches the BLEU score against `reference`. An empty reconstruction
    /// scores 0.
    pub fn with_reference(mut self, reference: &str) -> Result<Self> {
        self.bleu_vs_input = Some(sentence_bleu(&self.x_rec, reference)?);
        Ok(self)
    }
}

/// Activations handed to an inverter.
#[derive(Clone, Copy, Debug)]
pub enum InversionInput<'a, T> {
    Multi(&'a ActivationMatrix<T>),
    Single(&'a ActivationVector<T>),
}

fn decode_budget<T: Scalar>(inverter: &ModelHandle<T>, n_rows: usize) -> Result<usize> {
    let room = inverter.config.context_len.saturating_sub(n_rows);
    if room == 0 {
        return Err(LabError::Precondition(format!(
            "{n_rows} injected rows leave no room to decode in context {}",
            inverter.config.context_len
        )));
    }
    Ok(room.min(PLACEHOLDER_BUDGET + 1))
}

/// Greedy decode from every row injected at the first block.
pub fn invert_multi<T: Scalar>(inverter: &ModelHandle<T>, tok: &Tokenizer, acts: &ActivationMatrix<T>) -> Result<Reconstruction> {
    acts.validate(inverter.config.d_model)?;
    let mut acts = acts.clone();
    if acts.len() > PLACEHOLDER_BUDGET {
        log::warn!("{} activation rows exceed placeholder budget {PLACEHOLDER_BUDGET}; keeping the last rows", acts.len());
        acts.keep_last(PLACEHOLDER_BUDGET);
    }
    let layer = acts.layer;
    let prompt = placeholder_prompt(acts.len(), &[]);
    let budget = decode_budget(inverter, acts.len())?;
    let out = inverter.generate(&prompt, budget, &[PatchSpec::matrix(acts, 1, 0)])?;
    Ok(Reconstruction {
        x_rec: tok.decode(&out),
        source: InversionSource {
            layer,
            kind: InversionKind::Multi,
        },
        bleu_vs_input: None,
    })
}

/// Greedy decode from one state injected at position 0.
pub fn invert_single<T: Scalar>(inverter: &ModelHandle<T>, tok: &Tokenizer, act: &ActivationVector<T>) -> Result<Reconstruction> {
    if act.dim() != inverter.config.d_model {
        return Err(LabError::Dimension {
            what: "activation vector",
            expected: inverter.config.d_model,
            got: act.dim(),
        });
    }
    let prompt = placeholder_prompt(1, &[]);
    let budget = decode_budget(inverter, 1)?;
    let out = inverter.generate(&prompt, budget, &[PatchSpec::vector(act.clone(), 1, 0)])?;
    Ok(Reconstruction {
        x_rec: tok.decode(&out),
        source: InversionSource {
            layer: act.layer,
            kind: InversionKind::Single,
        },
        bleu_vs_input: None,
    })
}

pub fn invert<T: Scalar>(inverter: &ModelHandle<T>, tok: &Tokenizer, input: InversionInput<'_, T>) -> Result<Reconstruction> {
    match input {
        InversionInput::Multi(m) => invert_multi(inverter, tok, m),
        InversionInput::Single(v) => invert_single(inverter, tok, v),
    }
}

/// Answers `item.x_prompt` from a reconstruction through the interpreter's
/// plain-text path. The interpreter never sees activations.
pub fn interpret_reconstruction<T: Scalar>(
    interpreter: &ModelHandle<T>,
    tok: &Tokenizer,
    rec: &Reconstruction,
    item: &EvalItem,
) -> Result<VerbalizationOutput> {
    let substituted = EvalItem {
        x_input: rec.x_rec.clone(),
        ..item.clone()
    };
    let method = match rec.source.kind {
        InversionKind::Multi => Method::InvertMultiInterpret,
        InversionKind::Single => Method::InvertSingleInterpret,
    };
    let mut out = zero_shot_as(interpreter, tok, &substituted, method)?;
    out.source_layer = rec.source.layer;
    Ok(out)
}

/// Inversion followed by [`interpret_reconstruction`].
pub fn invert_then_interpret<T: Scalar>(
    inverter: &ModelHandle<T>,
    interpreter: &ModelHandle<T>,
    tok: &Tokenizer,
    input: InversionInput<'_, T>,
    item: &EvalItem,
) -> Result<(Reconstruction, VerbalizationOutput)> {
    let rec = invert(inverter, tok, input)?;
    let out = interpret_reconstruction(interpreter, tok, &rec, item)?;
    Ok((rec, out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRecord {
    pub item_id: String,
    pub x_input: String,
    pub x_rec: String,
    pub bleu: Option<f64>,
}

/// One JSON line per reconstruction.
pub fn write_reconstruction_dump(path: &Path, rows: &[ReconstructionRecord]) -> Result<()> {
    write_jsonl(path, rows)
}
