// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Case-insensitive raw substring test. Whole words are not required, so
/// `"Braiseroast"` contains `"roast"`.
pub fn contains_answer(output: &str, answer: &str) -> Result<bool> {
    if answer.trim().is_empty() {
        return Err(LabError::Precondition("empty answer matches every output".into()));
    }
    Ok(output.to_lowercase().contains(&answer.to_lowercase()))
}

/// Stricter secondary rule: the answer must be delimited by non-alphanumeric
/// characters (or the ends of the output).
pub fn contains_word(output: &str, answer: &str) -> Result<bool> {
    if answer.trim().is_empty() {
        return Err(LabError::Precondition("empty answer matches every output".into()));
    }
    let out = output.to_lowercase();
    let ans = answer.to_lowercase();
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
    let mut from = 0;
    while let Some(off) = out[from..].find(&ans) {
        let start = from + off;
        let end = start + ans.len();
        if boundary(out[..start].chars().next_back()) && boundary(out[end..].chars().next()) {
            return Ok(true);
        }
        from = start + out[start..].chars().next().map_or(1, char::len_utf8);
    }
    Ok(false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PatchscopeSingle,
    LitMulti,
    ZeroShot,
    CrossModel,
    InvertMultiInterpret,
    InvertSingleInterpret,
    Probe,
}

impl Method {
    pub fn key(self) -> &'static str {
        match self {
            Method::PatchscopeSingle => "patchscope_single",
            Method::LitMulti => "lit_multi",
            Method::ZeroShot => "zero_shot",
            Method::CrossModel => "cross_model",
            Method::InvertMultiInterpret => "invert_multi_interpret",
            Method::InvertSingleInterpret => "invert_single_interpret",
            Method::Probe => "probe",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Method {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        [
            Method::PatchscopeSingle,
            Method::LitMulti,
            Method::ZeroShot,
            Method::CrossModel,
            Method::InvertMultiInterpret,
            Method::InvertSingleInterpret,
            Method::Probe,
        ]
        .into_iter()
        .find(|m| m.key() == s)
        .ok_or_else(|| LabError::Unknown {
            kind: "method",
            name: s.to_string(),
        })
    }
}

/// Verbalizer layer an output came from; `None` means the method has no
/// per-layer patching (one output per item).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLayer {
    Layer(usize),
    Single,
    /// Marker for a row that already aggregates every target layer.
    AllEnsembled,
}

impl fmt::Display for TargetLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetLayer::Layer(l) => write!(f, "{l}"),
            TargetLayer::Single => f.write_str("single"),
            TargetLayer::AllEnsembled => f.write_str("all-ensembled"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: Method,
    pub task: String,
    pub item_id: String,
    /// `0` when the method reads no activations.
    pub source_layer: usize,
    pub target_layer: TargetLayer,
    pub output: String,
    pub answer: String,
    pub correct: bool,
}

impl TrialResult {
    pub fn scored(
        method: Method,
        task: &str,
        item_id: &str,
        source_layer: usize,
        target_layer: TargetLayer,
        output: String,
        answer: &str,
    ) -> Result<Self> {
        let correct = contains_answer(&output, answer)?;
        Ok(Self {
            method,
            task: task.to_string(),
            item_id: item_id.to_string(),
            source_layer,
            target_layer,
            output,
            answer: answer.to_string(),
            correct,
        })
    }
}

/// Recomputes every correct flag from the stored output and answer.
pub fn rescore(trials: &[TrialResult]) -> Result<Vec<bool>> {
    trials.iter().map(|t| contains_answer(&t.output, &t.answer)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    /// Correct if any target-layer output matches.
    AnyTargetLayer,
    /// Exactly one output per item and source layer.
    SingleOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub per_layer: BTreeMap<usize, f64>,
    /// Per-layer item correctness, items in sorted id order.
    pub per_layer_correct: BTreeMap<usize, Vec<bool>>,
    pub item_ids: Vec<String>,
    pub average: f64,
}

/// Accuracy per source layer and the mean over source layers. Every item
/// must have an output for every (source layer, target layer) cell seen in
/// the run.
pub fn score_run(trials: &[TrialResult], ensemble: Ensemble) -> Result<RunScore> {
    if trials.is_empty() {
        return Err(LabError::Empty("trials"));
    }
    let items: BTreeSet<&str> = trials.iter().map(|t| t.item_id.as_str()).collect();
    let sources: BTreeSet<usize> = trials.iter().map(|t| t.source_layer).collect();
    let targets: BTreeSet<TargetLayer> = trials.iter().map(|t| t.target_layer).collect();
    let mut cells: BTreeMap<(usize, &str, TargetLayer), bool> = BTreeMap::new();
    for t in trials {
        if cells.insert((t.source_layer, &t.item_id, t.target_layer), t.correct).is_some() {
            return Err(LabError::Precondition(format!(
                "duplicate trial for item {} at source layer {} target {}",
                t.item_id, t.source_layer, t.target_layer
            )));
        }
    }
    if ensemble == Ensemble::SingleOutput && targets.len() != 1 {
        return Err(LabError::Precondition(format!(
            "single-output scoring needs one output per item, found {} target layers",
            targets.len()
        )));
    }
    let mut per_layer = BTreeMap::new();
    let mut per_layer_correct = BTreeMap::new();
    for &s in &sources {
        let mut flags = Vec::with_capacity(items.len());
        for &item in &items {
            let mut any = false;
            for &tl in &targets {
                match cells.get(&(s, item, tl)) {
                    Some(&c) => any |= c,
                    None => {
                        return Err(LabError::Incomplete(format!(
                            "item {item} has no output at source layer {s}, target layer {tl}"
                        )))
                    }
                }
            }
            flags.push(any);
        }
        let acc = flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64;
        per_layer.insert(s, acc);
        per_layer_correct.insert(s, flags);
    }
    let average = per_layer.values().sum::<f64>() / per_layer.len() as f64;
    Ok(RunScore {
        per_layer,
        per_layer_correct,
        item_ids: items.into_iter().map(str::to_string).collect(),
        average,
    })
}
