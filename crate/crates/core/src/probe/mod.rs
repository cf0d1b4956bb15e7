// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multinomial logistic probes with an elastic-net penalty, fit by
//! full-batch proximal gradient.
//!
//! Objective over `n` standardized examples:
//! `mean CE + (l1·‖W‖₁ + ½·l2·‖W‖²) / n`; the bias is not penalized.

mod io;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_probe, save_probe, write_classification_report};

use crate::error::{LabError, Result};
use crate::linalg::argmax;
use crate::model::ActivationVector;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub iterations: usize,
    pub seed: u64,
    /// z-score features with statistics of the training set.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l1_weight: 0.5,
            l2_weight: 0.5,
            iterations: 5,
            seed: 0,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1_weight >= 0.0 && self.l2_weight >= 0.0) || !self.l1_weight.is_finite() || !self.l2_weight.is_finite()
        {
            return Err(LabError::Config("probe penalty weights must be finite and non-negative".into()));
        }
        if self.iterations == 0 {
            return Err(LabError::Config("probe iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe<T> {
    pub dim: usize,
    /// Row-major `dim × n_labels`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub labels: Vec<String>,
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Probe<T> {
    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    fn standardized(&self, x: &[T]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| ((v - m) / s).as_f64())
            .collect()
    }

    /// Softmax probabilities over labels.
    pub fn probabilities(&self, act: &[T]) -> Result<Vec<f64>> {
        if act.len() != self.dim {
            return Err(LabError::Dimension {
                what: "probe input",
                expected: self.dim,
                got: act.len(),
            });
        }
        let z = self.standardized(act);
        let k = self.n_labels();
        let mut s: Vec<f64> = self.bias.iter().map(|b| b.as_f64()).collect();
        for (j, &zj) in z.iter().enumerate() {
            for (sc, w) in s.iter_mut().zip(&self.weights[j * k..(j + 1) * k]) {
                *sc += zj * w.as_f64();
            }
        }
        softmax(&mut s);
        Ok(s)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).chain(&self.mean).chain(&self.scale).all(|v| v.is_finite())
    }
}

fn softmax(s: &mut [f64]) {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in s.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in s.iter_mut() {
        *v /= sum;
    }
}

/// Predicted label: the highest-probability one, ties to the lowest index.
pub fn probe_predict<'a, T: Scalar>(probe: &'a Probe<T>, act: &[T]) -> Result<&'a str> {
    let p = probe.probabilities(act)?;
    Ok(&probe.labels[argmax(&p)])
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Largest eigenvalue of `X̃ᵀX̃ / n`, where `X̃` appends a constant-one column.
fn gram_top_eigenvalue(x: &[Vec<f64>], rng: &mut ChaCha8Rng) -> f64 {
    let d = x[0].len() + 1;
    let n = x.len() as f64;
    let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.5).collect();
    let mut lambda = 0.0;
    for _ in 0..100 {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        let mut w = vec![0.0; d];
        for row in x {
            let xv: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d - 1];
            for (wj, &rj) in w.iter_mut().zip(row) {
                *wj += xv * rj;
            }
            w[d - 1] += xv;
        }
        w.iter_mut().for_each(|a| *a /= n);
        let next = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        v = w;
        if (next - lambda).abs() <= 1e-9 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(1e-12)
}

/// Fits a probe on aligned activations and labels. The label list is the
/// sorted set of distinct labels.
pub fn train_probe<T: Scalar>(acts: &[Vec<T>], labels: &[String], cfg: &ProbeConfig) -> Result<Probe<T>> {
    cfg.validate()?;
    if acts.len() != labels.len() {
        return Err(LabError::Dimension {
            what: "probe activations vs labels",
            expected: acts.len(),
            got: labels.len(),
        });
    }
    if acts.is_empty() {
        return Err(LabError::Empty("probe training set"));
    }
    let dim = acts[0].len();
    if dim == 0 || acts.iter().any(|a| a.len() != dim) {
        return Err(LabError::Dimension {
            what: "probe activation width",
            expected: dim,
            got: acts.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
        });
    }
    if acts.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LabError::NonFinite("probe features".into()));
    }
    let mut vocab: Vec<String> = labels.to_vec();
    vocab.sort();
    vocab.dedup();
    if vocab.len() < 2 {
        return Err(LabError::Precondition("a probe needs at least two distinct labels".into()));
    }
    let k = vocab.len();
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let y: Vec<usize> = labels.iter().map(|l| index[l.as_str()]).collect();
    let n = acts.len();

    let (mean, scale): (Vec<f64>, Vec<f64>) = if cfg.standardize {
        let mean: Vec<f64> = (0..dim).map(|j| acts.iter().map(|a| a[j].as_f64()).sum::<f64>() / n as f64).collect();
        let scale = (0..dim)
            .map(|j| {
                let var = acts.iter().map(|a| (a[j].as_f64() - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };
    let x: Vec<Vec<f64>> = acts
        .iter()
        .map(|a| (0..dim).map(|j| (a[j].as_f64() - mean[j]) / scale[j]).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nf = n as f64;
    let lip = 0.5 * gram_top_eigenvalue(&x, &mut rng) + cfg.l2_weight / nf;
    let step = 1.0 / lip;
    let mut w = vec![0.0f64; dim * k];
    let mut b = vec![0.0f64; k];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.iterations {
        // visiting order does not change a full-batch sum mathematically; a
        // fixed shuffled order keeps the floating-point result seed-defined
        order.shuffle(&mut rng);
        let mut gw = vec![0.0; dim * k];
        let mut gb = vec![0.0; k];
        let mut s = vec![0.0; k];
        for &i in &order {
            s.copy_from_slice(&b);
            for (j, &xj) in x[i].iter().enumerate() {
                for c in 0..k {
                    s[c] += xj * w[j * k + c];
                }
            }
            softmax(&mut s);
            s[y[i]] -= 1.0;
            for (j, &xj) in x[i].iter().enumerate() {
                for c in 0..k {
                    gw[j * k + c] += xj * s[c];
                }
            }
            for c in 0..k {
                gb[c] += s[c];
            }
        }
        for (wv, g) in w.iter_mut().zip(&gw) {
            let smooth = g / nf + cfg.l2_weight / nf * *wv;
            *wv = soft_threshold(*wv - step * smooth, step * cfg.l1_weight / nf);
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= step * g / nf;
        }
    }
    let probe = Probe {
        dim,
        weights: w.into_iter().map(T::lit).collect(),
        bias: b.into_iter().map(T::lit).collect(),
        labels: vocab,
        mean: mean.into_iter().map(T::lit).collect(),
        scale: scale.into_iter().map(T::lit).collect(),
    };
    if !probe.is_finite() {
        return Err(LabError::NonFinite("probe parameters after training".into()));
    }
    Ok(probe)
}

/// [`train_probe`] over captured activation vectors.
pub fn train_probe_vectors<T: Scalar>(
    acts: &[ActivationVector<T>],
    labels: &[String],
    cfg: &ProbeConfig,
) -> Result<Probe<T>> {
    let rows: Vec<Vec<T>> = acts.iter().map(|a| a.values.clone()).collect();
    train_probe(&rows, labels, cfg)
}

/// Stratified split: within each label, a seeded shuffle assigns
/// `round(train_frac · count)` items to train (at least one when the label
/// has two or more items). Returns sorted index lists.
pub fn stratified_split(labels: &[String], train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(LabError::Config(format!("train fraction {train_frac} outside [0, 1]")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        let mut cut = (train_frac * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            cut = cut.clamp(1, idx.len() - 1);
        }
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Per-label precision and recall plus overall accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    /// `(label, precision, recall, support)`
    pub per_label: Vec<(String, f64, f64, usize)>,
}

pub fn classification_report(predicted: &[String], gold: &[String]) -> Result<ClassificationReport> {
    if predicted.len() != gold.len() {
        return Err(LabError::Dimension {
            what: "predictions vs gold labels",
            expected: gold.len(),
            got: predicted.len(),
        });
    }
    if gold.is_empty() {
        return Err(LabError::Empty("gold labels"));
    }
    let mut labels: Vec<&String> = gold.iter().chain(predicted).collect();
    labels.sort();
    labels.dedup();
    let correct = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    let per_label = labels
        .into_iter()
        .map(|l| {
            let tp = predicted.iter().zip(gold).filter(|(p, g)| *p == l && *g == l).count();
            let pred = predicted.iter().filter(|p| *p == l).count();
            let support = gold.iter().filter(|g| *g == l).count();
            let precision = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            (l.clone(), precision, recall, support)
        })
        .collect();
    Ok(ClassificationReport {
        accuracy: correct as f64 / gold.len() as f64,
        n: gold.len(),
        correct,
        per_label,
    })
}
