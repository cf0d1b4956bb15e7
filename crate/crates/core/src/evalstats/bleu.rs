// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corpus BLEU: clipped 1–4-gram precisions, uniform weights, brevity
//! penalty. An order with zero matches uses `(0 + 1) / (total + 1)`.

use std::collections::HashMap;

use crate::error::{LabError, Result};
use crate::tokenizer::pre_tokenize;

const MAX_N: usize = 4;

fn ngram_counts<'a, 'b>(toks: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU over pre-split token lists, in `[0, 100]`.
pub fn bleu_tokens(candidates: &[Vec<&str>], references: &[Vec<&str>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(LabError::Empty("BLEU candidates"));
    }
    if candidates.len() != references.len() {
        return Err(LabError::Dimension {
            what: "BLEU candidate/reference count",
            expected: references.len(),
            got: candidates.len(),
        });
    }
    if references.iter().all(|r| r.is_empty()) {
        return Err(LabError::Empty("BLEU references"));
    }
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=MAX_N {
            let cc = ngram_counts(c, n);
            let rc = ngram_counts(r, n);
            totals[n - 1] += c.len().saturating_sub(n - 1);
            matches[n - 1] += cc.iter().map(|(g, &k)| k.min(*rc.get(g).unwrap_or(&0))).sum::<usize>();
        }
    }
    if c_len == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..MAX_N {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_p += p.ln() / MAX_N as f64;
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(100.0 * bp * log_p.exp())
}

/// Corpus BLEU over strings, split the way the tokenizer splits words.
pub fn bleu(candidates: &[String], references: &[String]) -> Result<f64> {
    let c: Vec<Vec<&str>> = candidates.iter().map(|s| pre_tokenize(s)).collect();
    let r: Vec<Vec<&str>> = references.iter().map(|s| pre_tokenize(s)).collect();
    bleu_tokens(&c, &r)
}

/// BLEU of one candidate against one reference.
pub fn sentence_bleu(candidate: &str, reference: &str) -> Result<f64> {
    bleu(&[candidate.to_string()], &[reference.to_string()])
}
