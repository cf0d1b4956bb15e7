// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token training, decoder finetuning and affine activation maps.

mod affine;
mod backward;
mod decoder;

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use affine::{fit_affine, fit_affine_vectors, AffineFit, AffineMap, RIDGE_LAMBDA};
pub use decoder::{
    decoder_examples, finetune_decoder, finetune_decoder_with, placeholder_prompt, rehearsal_examples, DecoderMode,
    PLACEHOLDER_BUDGET,
};

use crate::error::{LabError, Result};
use crate::model::{checkpoint, ModelHandle, PatchSpec};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenId, Tokenizer, EOT_ID};

/// Which positions contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    FullSequence,
    AnswerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub seed: u64,
    pub loss_mask_mode: LossMask,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Learning rate decays linearly after warmup to this fraction of the
    /// peak. `1.0` keeps it constant.
    pub final_lr_frac: f64,
    /// Write `step_<n>.ckpt` every this many steps into `checkpoint_dir`.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn scratch(epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 32,
            epochs,
            warmup_steps: 0,
            seed,
            loss_mask_mode: LossMask::FullSequence,
            grad_clip: Some(1.0),
            final_lr_frac: 1.0,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }

    pub fn finetune(epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: 1e-4,
            ..Self::scratch(epochs, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(LabError::Config(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(LabError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(LabError::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_frac) {
            return Err(LabError::Config("final_lr_frac must lie in [0, 1]".into()));
        }
        if self.checkpoint_every.is_some() && self.checkpoint_dir.is_none() {
            return Err(LabError::Config("checkpoint_every requires checkpoint_dir".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let rest = total.saturating_sub(self.warmup_steps).max(1);
        let done = (step - self.warmup_steps) as f64 / rest as f64;
        self.learning_rate * (1.0 - (1.0 - self.final_lr_frac) * done)
    }
}

/// One training sequence. Position `i` predicts `targets[i]` from
/// `tokens[..=i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub tokens: Vec<TokenId>,
    pub targets: Vec<TokenId>,
    /// Positions counted under [`LossMask::AnswerOnly`].
    pub answer_mask: Vec<bool>,
    /// Activations injected during the pass.
    pub patches: Vec<PatchSpec<T>>,
}

impl<T: Scalar> Example<T> {
    /// Shifted next-token example over a whole sequence.
    pub fn language_model(seq: &[TokenId]) -> Self {
        let n = seq.len() - 1;
        Self {
            tokens: seq[..n].to_vec(),
            targets: seq[1..].to_vec(),
            answer_mask: vec![true; n],
            patches: Vec::new(),
        }
    }

    /// `prompt ++ answer`; only positions that predict answer tokens count.
    pub fn prompt_answer(prompt: &[TokenId], answer: &[TokenId]) -> Self {
        let mut seq = prompt.to_vec();
        seq.extend_from_slice(answer);
        let mut ex = Self::language_model(&seq);
        for (i, m) in ex.answer_mask.iter_mut().enumerate() {
            *m = i + 1 >= prompt.len();
        }
        ex
    }
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss of each step's batch (nats per counted token).
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    /// `step,loss,lr` lines with a header.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "step,loss,lr")?;
        for (i, (l, r)) in self.losses.iter().zip(&self.learning_rates).enumerate() {
            writeln!(w, "{},{:.6},{:.3e}", i + 1, l, r)?;
        }
        Ok(())
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let b1 = T::lit(BETA1);
        let b2 = T::lit(BETA2);
        let c1 = T::one() - b1;
        let c2 = T::one() - b2;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(ADAM_EPS);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + c1 * g;
            self.v[i] = b2 * self.v[i] + c2 * g * g;
            params[i] = params[i] - step * self.m[i] / ((self.v[i] * inv_bc2).sqrt() + eps);
        }
    }
}

/// Trains `model` on `examples` with Adam. Examples are visited in a
/// seeded random order each epoch; batch gradients are summed in that
/// order, so the run is bit-reproducible.
pub fn train_examples<T: Scalar>(
    model: &mut ModelHandle<T>,
    examples: &[Example<T>],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(LabError::Empty("training examples"));
    }
    for ex in examples {
        if ex.tokens.len() > model.config.context_len {
            return Err(LabError::OutOfRange {
                what: "example length",
                got: ex.tokens.len(),
                lo: 1,
                hi: model.config.context_len,
            });
        }
    }
    let answer_only = cfg.loss_mask_mode == LossMask::AnswerOnly;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut adam = Adam::new(model.params.data.len());
    let mut grad = model.params.zeros_like();
    let mut report = TrainReport {
        losses: Vec::with_capacity(total),
        learning_rates: Vec::with_capacity(total),
        steps: 0,
    };
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "step,loss,lr")?;
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let count: usize = batch
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    if answer_only {
                        ex.answer_mask.iter().filter(|&&m| m).count()
                    } else {
                        ex.tokens.len()
                    }
                })
                .sum();
            grad.fill(T::zero());
            let lr = cfg.lr_at(step, total);
            if count == 0 {
                step += 1;
                continue;
            }
            let weight = T::one() / T::lit(count as f64);
            let mut loss_sum = 0.0;
            for &i in batch {
                let (l, _) = backward::example_grad(model, &examples[i], answer_only, weight, &mut grad);
                loss_sum += l.as_f64();
            }
            let loss = loss_sum / count as f64;
            if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(LabError::Diverged {
                    step: step + 1,
                    detail: format!("non-finite loss {loss} on batch examples {batch:?}"),
                });
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
                if norm > clip {
                    let s = T::lit(clip / norm);
                    for g in grad.iter_mut() {
                        *g = *g * s;
                    }
                }
            }
            adam.step(&mut model.params.data, &grad, lr);
            step += 1;
            report.losses.push(loss);
            report.learning_rates.push(lr);
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{step},{loss:.6},{lr:.3e}")?;
            }
            if let (Some(every), Some(dir)) = (cfg.checkpoint_every, cfg.checkpoint_dir.as_ref()) {
                if step % every == 0 {
                    std::fs::create_dir_all(dir)?;
                    checkpoint::save(model, &dir.join(format!("step_{step}.ckpt")))?;
                }
            }
        }
    }
    report.steps = step;
    Ok(report)
}

/// Mean loss over `examples` without updating weights.
pub fn evaluate_loss<T: Scalar>(model: &ModelHandle<T>, examples: &[Example<T>], mode: LossMask) -> f64 {
    let answer_only = mode == LossMask::AnswerOnly;
    let (mut sum, mut count) = (0.0, 0usize);
    for ex in examples {
        let (l, c) = backward::example_loss(model, ex, answer_only);
        sum += l.as_f64();
        count += c;
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Tokenizes documents (each followed by end-of-text) into next-token
/// examples, splitting anything longer than the context window.
pub fn lm_examples<T: Scalar>(corpus: &[String], tok: &Tokenizer, context_len: usize) -> Vec<Example<T>> {
    let mut out = Vec::new();
    for doc in corpus {
        let mut ids = tok.encode(doc);
        ids.push(EOT_ID);
        let mut start = 0;
        while start + 1 < ids.len() {
            let end = (start + context_len + 1).min(ids.len());
            out.push(Example::language_model(&ids[start..end]));
            start = end - 1;
        }
    }
    out
}

/// Next-token training on raw documents.
pub fn train_lm<T: Scalar>(
    mut model: ModelHandle<T>,
    corpus: &[String],
    tok: &Tokenizer,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<(ModelHandle<T>, TrainReport)> {
    if corpus.is_empty() {
        return Err(LabError::Empty("training corpus"));
    }
    let examples = lm_examples(corpus, tok, model.config.context_len);
    let report = train_examples(&mut model, &examples, cfg, log)?;
    model.provenance = format!(
        "{} > train_lm(docs={}, steps={}, lr={}, seed={})",
        model.provenance,
        corpus.len(),
        report.steps,
        cfg.learning_rate,
        cfg.seed
    );
    Ok((model, report))
}

/// Text question answering: `context . question` → `answer <eot>`.
pub fn train_text_qa<T: Scalar>(
    mut model: ModelHandle<T>,
    records: &[(String, String)],
    tok: &Tokenizer,
    cfg: &TrainConfig,
) -> Result<(ModelHandle<T>, TrainReport)> {
    if records.is_empty() {
        return Err(LabError::Empty("question answering records"));
    }
    let examples: Vec<Example<T>> = records
        .iter()
        .map(|(prompt, answer)| {
            let mut a = tok.encode(answer);
            a.push(EOT_ID);
            Example::prompt_answer(&tok.encode(prompt), &a)
        })
        .collect();
    let mut cfg = cfg.clone();
    cfg.loss_mask_mode = LossMask::AnswerOnly;
    let report = train_examples(&mut model, &examples, &cfg, None)?;
    model.provenance = format!("{} > train_text_qa(records={}, steps={})", model.provenance, records.len(), report.steps);
    Ok((model, report))
}

#[cfg(test)]
mod tests;
