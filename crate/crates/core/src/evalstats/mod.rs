// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scoring rules, accuracy aggregation, BLEU and significance tests.

mod bleu;
mod scoring;
mod stats;
mod suites;

#[cfg(test)]
mod tests;

pub use bleu::{bleu, bleu_tokens, sentence_bleu};
pub use scoring::{
    contains_answer, contains_word, rescore, score_run, Ensemble, Method, RunScore, TargetLayer, TrialResult,
};
pub use stats::{
    binomial_upper_tail, bonferroni, chance_ceiling, exact_binomial_two_sided, mcnemar, SignificanceResult, ALPHA,
    EXACT_MCNEMAR_MAX,
};
pub use suites::{
    knowledge_check, knowledge_check_all, sensitivity_suite, swap_label_eval, KnowledgeScore, SensitivityReport,
    SensitivityRow, SensitivityTrial, SwapLabelResult,
};
