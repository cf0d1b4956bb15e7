// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::factorial::ln_binomial;

use crate::error::{LabError, Result};

pub const ALPHA: f64 = 0.05;
/// Largest discordant count handled by the exact binomial form.
pub const EXACT_MCNEMAR_MAX: usize = 25;

pub fn bonferroni(p: f64, n_comparisons: usize) -> f64 {
    (p * n_comparisons.max(1) as f64).min(1.0)
}

/// `P(X ≥ k)` for `X ~ Binomial(n, p)`, summed term by term.
pub fn binomial_upper_tail(k: usize, n: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let tail: f64 = (k..=n)
        .map(|i| (ln_binomial(n as u64, i as u64) + i as f64 * lp + (n - i) as f64 * lq).exp())
        .sum();
    tail.min(1.0)
}

/// Two-sided exact sign test: `min(1, 2·P(X ≥ max(a, b)))` with `X ~ Bin(a+b, ½)`.
pub fn exact_binomial_two_sided(a: usize, b: usize) -> f64 {
    let n = a + b;
    if n == 0 {
        return 1.0;
    }
    (2.0 * binomial_upper_tail(a.max(b), n, 0.5)).min(1.0)
}

/// Largest accuracy still consistent with guessing: `k/n` for the smallest
/// `k` with `P(X > k) ≤ α`, `X ~ Bin(n, p)`.
pub fn chance_ceiling(n: usize, p: f64, alpha: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    for k in 0..=n {
        if binomial_upper_tail(k + 1, n, p) <= alpha {
            return k as f64 / n as f64;
        }
    }
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    /// `a` right, `b` wrong.
    pub b10: usize,
    /// `a` wrong, `b` right.
    pub b01: usize,
    /// Binomial-tail count for the exact form, chi-square otherwise.
    pub statistic: f64,
    pub exact: bool,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub n_comparisons: usize,
    pub significant: bool,
    /// No discordant pairs: `p` is 1 by convention.
    pub degenerate: bool,
    /// `+1` if `a` is right more often on discordant items, `-1` if `b`, `0` on a tie.
    pub direction: i8,
}

/// McNemar's test on paired correctness vectors with Bonferroni adjustment.
pub fn mcnemar(a: &[bool], b: &[bool], n_comparisons: usize) -> Result<SignificanceResult> {
    if a.len() != b.len() {
        return Err(LabError::Dimension {
            what: "paired correctness vectors",
            expected: a.len(),
            got: b.len(),
        });
    }
    if n_comparisons == 0 {
        return Err(LabError::Precondition("n_comparisons must be at least 1".into()));
    }
    let b10 = a.iter().zip(b).filter(|(&x, &y)| x && !y).count();
    let b01 = a.iter().zip(b).filter(|(&x, &y)| !x && y).count();
    let n = b10 + b01;
    let direction = (b10 as i64 - b01 as i64).signum() as i8;
    let (statistic, p_raw, exact) = if n == 0 {
        (0.0, 1.0, true)
    } else if n <= EXACT_MCNEMAR_MAX {
        (b10.max(b01) as f64, exact_binomial_two_sided(b10, b01), true)
    } else {
        let diff = (b10 as f64 - b01 as f64).abs() - 1.0;
        let chi2 = diff.max(0.0).powi(2) / n as f64;
        let dist = ChiSquared::new(1.0).expect("one degree of freedom");
        (chi2, 1.0 - dist.cdf(chi2), false)
    };
    let p_adjusted = bonferroni(p_raw, n_comparisons);
    Ok(SignificanceResult {
        b10,
        b01,
        statistic,
        exact,
        p_raw,
        p_adjusted,
        n_comparisons,
        significant: p_adjusted < ALPHA,
        degenerate: n == 0,
        direction,
    })
}
