// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation stages. Each writes its CSV tables plus a JSONL dump of the
//! raw outputs and returns the run-relative paths it wrote.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use verbalab_core::evalstats::{
    binomial_upper_tail, chance_ceiling, knowledge_check_all, mcnemar, score_run, sensitivity_suite, swap_label_eval,
    Ensemble, Method, RunScore, SensitivityTrial, TargetLayer, TrialResult,
};
use verbalab_core::inversion::{invert_multi, invert_single, invert_then_interpret, InversionInput, ReconstructionRecord};
use verbalab_core::probe::{probe_predict, save_probe, stratified_split, train_probe, classification_report, write_classification_report};
use verbalab_core::verbalize::{
    capture_input_matrix, lit_verbalize, patchscope_single, to_trials, write_trial_dump, zero_shot, VerbalizationOutput,
};
use verbalab_core::evalstats::bleu;
use verbalab_core::worldgen::{make_eval_items, read_jsonl, write_jsonl, Attribute, EvalItem, Persona, Regime, X_INPUT_TEMPLATE};
use verbalab_core::{Model, Tokenizer};

use crate::config::ProbeParams;
use crate::error::{Result, RunError};
use crate::runner::{target_stage, Lab, Stage};
use crate::store::{fmt6, write_csv};

pub const ACCURACY_HEADER: [&str; 6] = ["method", "task", "source_layer", "n", "correct", "accuracy"];
pub const SIGNIFICANCE_HEADER: [&str; 13] = [
    "method_a",
    "method_b",
    "task",
    "source_layer",
    "b10",
    "b01",
    "statistic",
    "exact",
    "p_raw",
    "p_adjusted",
    "n_comparisons",
    "significant",
    "direction",
];

/// Writes a CSV into the run directory and records it.
struct Out<'a> {
    lab: &'a Lab,
    fp: &'a str,
    seed: u64,
    files: Vec<String>,
}

impl<'a> Out<'a> {
    fn new(lab: &'a Lab, fp: &'a str, seed: u64) -> Self {
        Self {
            lab,
            fp,
            seed,
            files: Vec::new(),
        }
    }

    fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        write_csv(&self.lab.run.path(rel)?, self.fp, self.seed, header, rows)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn trials(&mut self, rel: &str, trials: &[TrialResult]) -> Result<()> {
        write_trial_dump(&self.lab.run.path(rel)?, trials)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn jsonl<R: Serialize>(&mut self, rel: &str, rows: &[R]) -> Result<()> {
        write_jsonl(&self.lab.run.path(rel)?, rows)?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

fn ensemble_for(m: Method) -> Ensemble {
    if m == Method::PatchscopeSingle {
        Ensemble::AnyTargetLayer
    } else {
        Ensemble::SingleOutput
    }
}

/// Scores one method on one task, or on every task when `task` is `None`.
pub fn score(trials: &[TrialResult], method: Method, task: Option<&str>) -> Result<Option<RunScore>> {
    let sel: Vec<TrialResult> =
        trials.iter().filter(|t| t.method == method && task.is_none_or(|k| t.task == k)).cloned().collect();
    if sel.is_empty() {
        return Ok(None);
    }
    Ok(Some(score_run(&sel, ensemble_for(method))?))
}

/// Method × task × source layer rows, plus an `all` task pooling every
/// item and an `avg` layer row holding the mean over source layers.
pub fn accuracy_rows(trials: &[TrialResult]) -> Result<Vec<Vec<String>>> {
    let methods: BTreeSet<Method> = trials.iter().map(|t| t.method).collect();
    let tasks: BTreeSet<&str> = trials.iter().map(|t| t.task.as_str()).collect();
    let mut rows = Vec::new();
    for &m in &methods {
        for task in tasks.iter().map(|t| Some(*t)).chain([None]) {
            let Some(s) = score(trials, m, task)? else {
                continue;
            };
            let name = task.unwrap_or("all").to_string();
            let n = s.item_ids.len();
            let mut total = 0;
            for (l, flags) in &s.per_layer_correct {
                let c = flags.iter().filter(|&&f| f).count();
                total += c;
                rows.push(vec![m.to_string(), name.clone(), l.to_string(), n.to_string(), c.to_string(), fmt6(s.per_layer[l])]);
            }
            rows.push(vec![
                m.to_string(),
                name,
                "avg".into(),
                (n * s.per_layer.len()).to_string(),
                total.to_string(),
                fmt6(s.average),
            ]);
        }
    }
    Ok(rows)
}

fn verbalizer_outputs(
    base: &Model,
    target: &Model,
    lit: &Model,
    tok: &Tokenizer,
    items: &[EvalItem],
    layers: &[usize],
) -> Result<Vec<VerbalizationOutput>> {
    let mut outs = Vec::new();
    for it in items {
        outs.push(zero_shot(base, tok, it)?);
    }
    for &l in layers {
        for it in items {
            outs.push(lit_verbalize(target, lit, tok, it, l)?);
            outs.extend(patchscope_single(target, base, tok, it, l)?);
        }
    }
    Ok(outs)
}

fn name_activations(target: &Model, tok: &Tokenizer, personas: &[Persona], layer: usize) -> Result<Vec<Vec<f32>>> {
    personas
        .iter()
        .map(|p| Ok(target.capture_last(&tok.encode(&X_INPUT_TEMPLATE.replace("{n}", &p.name)), layer)?.values))
        .collect()
}

/// Probe predictions with k-fold cross-validation over personas, so every
/// persona is scored by a probe that never saw it.
fn probe_trials(
    target: &Model,
    tok: &Tokenizer,
    personas: &[Persona],
    layers: &[usize],
    params: &ProbeParams,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    let k = params.folds;
    let mut trials = Vec::new();
    for &l in layers {
        let acts = name_activations(target, tok, personas, l)?;
        for a in Attribute::ALL {
            let items = make_eval_items(personas, a.key())?;
            for f in 0..k {
                let (train, test): (Vec<usize>, Vec<usize>) = (0..personas.len()).partition(|i| i % k != f);
                let xs: Vec<Vec<f32>> = train.iter().map(|&i| acts[i].clone()).collect();
                let ys: Vec<String> = train.iter().map(|&i| items[i].answer.clone()).collect();
                let probe = train_probe(&xs, &ys, &params.to_probe_config(seed))?;
                for &i in &test {
                    let pred = probe_predict(&probe, &acts[i])?;
                    trials.push(TrialResult::scored(
                        Method::Probe,
                        a.key(),
                        &items[i].item_id,
                        l,
                        TargetLayer::Single,
                        pred.to_string(),
                        &items[i].answer,
                    )?);
                }
            }
        }
    }
    Ok(trials)
}

fn target_for(lab: &mut Lab, r: Regime) -> Result<std::rc::Rc<Model>> {
    match target_stage(r) {
        Some(s) => lab.model(s),
        None => lab.model(Stage::Base),
    }
}

pub fn regime_eval(lab: &mut Lab, r: Regime, fp: &str, seed: u64) -> Result<Vec<String>> {
    let data = lab.data()?;
    let base = lab.model(Stage::Base)?;
    let lit = lab.model(Stage::Lit)?;
    let target = target_for(lab, r)?;
    let reg = data.regime(r);
    let layers = lab.cfg.source_layers.clone();
    let tok = &data.tokenizer;
    let mut trials = to_trials(&verbalizer_outputs(&base, &target, &lit, tok, &reg.items()?, &layers)?)?;
    trials.extend(probe_trials(&target, tok, &reg.personas, &layers, &lab.cfg.probe, seed)?);
    let mut out = Out::new(lab, fp, seed);
    out.csv(&format!("eval/{r}/accuracy.csv"), &ACCURACY_HEADER, &accuracy_rows(&trials)?)?;
    out.trials(&format!("eval/{r}/trials.jsonl"), &trials)?;
    Ok(out.files)
}

/// One probe per attribute and layer on a stratified train split, with a
/// classification report on the rest.
pub fn probe_split(lab: &mut Lab, r: Regime, fp: &str, seed: u64) -> Result<Vec<String>> {
    let data = lab.data()?;
    let target = target_for(lab, r)?;
    let reg = data.regime(r);
    let layers = lab.cfg.source_layers.clone();
    let params = lab.cfg.probe.clone();
    let mut out = Out::new(lab, fp, seed);
    let mut rows = Vec::new();
    for &l in &layers {
        let acts = name_activations(&target, &data.tokenizer, &reg.personas, l)?;
        for a in Attribute::ALL {
            let labels: Vec<String> = reg.personas.iter().map(|p| p.get(a).to_string()).collect();
            let (train, test) = stratified_split(&labels, params.train_frac, seed)?;
            let xs: Vec<Vec<f32>> = train.iter().map(|&i| acts[i].clone()).collect();
            let ys: Vec<String> = train.iter().map(|&i| labels[i].clone()).collect();
            let probe = train_probe(&xs, &ys, &params.to_probe_config(seed))?;
            let rel = format!("probes/{r}/{}_layer{l}.probe", a.key());
            save_probe(&probe, &out.lab.run.path(&rel)?)?;
            out.files.push(rel);
            let pred: Vec<String> =
                test.iter().map(|&i| probe_predict(&probe, &acts[i]).map(str::to_string)).collect::<Result<_, _>>()?;
            let gold: Vec<String> = test.iter().map(|&i| labels[i].clone()).collect();
            let report = classification_report(&pred, &gold)?;
            let mut buf = crate::store::csv_provenance(fp, seed).into_bytes();
            write_classification_report(&report, &mut buf)?;
            let rel = format!("probes/{r}/{}_layer{l}.report.csv", a.key());
            std::fs::write(out.lab.run.path(&rel)?, buf)?;
            out.files.push(rel);
            let chance = 1.0 / probe.n_labels() as f64;
            rows.push(vec![
                a.key().to_string(),
                l.to_string(),
                report.n.to_string(),
                report.correct.to_string(),
                fmt6(report.accuracy),
                fmt6(chance),
            ]);
        }
    }
    out.csv(
        &format!("probes/{r}/summary.csv"),
        &["attribute", "source_layer", "n_test", "correct", "accuracy", "chance"],
        &rows,
    )?;
    Ok(out.files)
}

fn significance_row(a: Method, b: Method, task: &str, layer: usize, x: &[bool], y: &[bool], n_comp: usize) -> Result<Vec<String>> {
    let s = mcnemar(x, y, n_comp)?;
    Ok(vec![
        a.to_string(),
        b.to_string(),
        task.to_string(),
        layer.to_string(),
        s.b10.to_string(),
        s.b01.to_string(),
        fmt6(s.statistic),
        s.exact.to_string(),
        fmt6(s.p_raw),
        fmt6(s.p_adjusted),
        s.n_comparisons.to_string(),
        s.significant.to_string(),
        s.direction.to_string(),
    ])
}

/// Zero-shot against each activation method, per task and source layer,
/// Bonferroni-adjusted over tasks.
pub fn significance_rows(trials: &[TrialResult], baseline: Method, others: &[Method]) -> Result<Vec<Vec<String>>> {
    let tasks: BTreeSet<&str> = trials.iter().map(|t| t.task.as_str()).collect();
    let mut rows = Vec::new();
    for &task in &tasks {
        let Some(zs) = score(trials, baseline, Some(task))? else {
            continue;
        };
        let zs_flags = zs.per_layer_correct.values().next().expect("one layer");
        for &m in others {
            let Some(s) = score(trials, m, Some(task))? else {
                continue;
            };
            if s.item_ids != zs.item_ids {
                return Err(RunError::Validation(format!("{m} and {baseline} scored different items on {task}")));
            }
            for (l, flags) in &s.per_layer_correct {
                rows.push(significance_row(baseline, m, task, *l, zs_flags, flags, tasks.len())?);
            }
        }
    }
    Ok(rows)
}

pub fn kf1(lab: &mut Lab, fp: &str, seed: u64) -> Result<Vec<String>> {
    let data = lab.data()?;
    let base = lab.model(Stage::Base)?;
    let lit = lab.model(Stage::Lit)?;
    let layers = lab.cfg.source_layers.clone();
    let trials = to_trials(&verbalizer_outputs(&base, &base, &lit, &data.tokenizer, &data.triples, &layers)?)?;
    let mut out = Out::new(lab, fp, seed);
    out.csv("eval/kf1/accuracy.csv", &ACCURACY_HEADER, &accuracy_rows(&trials)?)?;
    out.csv(
        "eval/kf1/significance.csv",
        &SIGNIFICANCE_HEADER,
        &significance_rows(&trials, Method::ZeroShot, &[Method::LitMulti, Method::PatchscopeSingle])?,
    )?;
    out.trials("eval/kf1/trials.jsonl", &trials)?;
    Ok(out.files)
}

pub fn kf2(lab: &mut Lab, fp: &str, seed: u64) -> Result<Vec<String>> {
    let data = lab.data()?;
    let base = lab.model(Stage::Base)?;
    let lit = lab.model(Stage::Lit)?;
    let inv_m = lab.model(Stage::InverterMulti)?;
    let inv_s = lab.model(Stage::InverterSingle)?;
    let layer = lab.cfg.decoder.layer;
    let tok = &data.tokenizer;

    let refs = data.heldout_contexts();
    let (mut multi, mut single) = (Vec::new(), Vec::new());
    for (i, r) in refs.iter().enumerate() {
        let acts = base.capture_layer(&tok.encode(r), layer)?;
        let last = acts.last().ok_or(verbalab_core::LabError::Empty("context"))?;
        for (dst, rec) in [
            (&mut multi, invert_multi(&inv_m, tok, &acts)?),
            (&mut single, invert_single(&inv_s, tok, &last)?),
        ] {
            let rec = rec.with_reference(r)?;
            dst.push(ReconstructionRecord {
                item_id: format!("heldout-{i:04}"),
                x_input: r.clone(),
                x_rec: rec.x_rec,
                bleu: rec.bleu_vs_input,
            });
        }
    }
    let corpus_bleu = |rows: &[ReconstructionRecord]| -> Result<f64> {
        let c: Vec<String> = rows.iter().map(|r| r.x_rec.clone()).collect();
        Ok(bleu(&c, &refs)?)
    };
    let inversion_rows = vec![
        vec!["multi".into(), layer.to_string(), refs.len().to_string(), fmt6(corpus_bleu(&multi)?)],
        vec!["single".into(), layer.to_string(), refs.len().to_string(), fmt6(corpus_bleu(&single)?)],
    ];

    let mut outs = Vec::new();
    for it in &data.triples {
        outs.push(lit_verbalize(&base, &lit, tok, it, layer)?);
        let acts = capture_input_matrix(&base, tok, it, layer)?;
        outs.push(invert_then_interpret(&inv_m, &base, tok, InversionInput::Multi(&acts), it)?.1);
        let last = acts.last().ok_or(verbalab_core::LabError::Empty("input"))?;
        outs.push(invert_then_interpret(&inv_s, &base, tok, InversionInput::Single(&last), it)?.1);
    }
    let trials = to_trials(&outs)?;
    let tasks: BTreeSet<&str> = trials.iter().map(|t| t.task.as_str()).collect();
    let mut cmp = Vec::new();
    for &task in &tasks {
        let acc = |m| -> Result<f64> { Ok(score(&trials, m, Some(task))?.map_or(0.0, |s| s.average)) };
        let (l, im, is) = (acc(Method::LitMulti)?, acc(Method::InvertMultiInterpret)?, acc(Method::InvertSingleInterpret)?);
        cmp.push(vec![task.to_string(), fmt6(l), fmt6(im), fmt6(is), (im >= 0.5 * l).to_string()]);
    }

    let mut out = Out::new(lab, fp, seed);
    out.csv("eval/kf2/inversion.csv", &["inverter", "source_layer", "n", "bleu"], &inversion_rows)?;
    out.jsonl("eval/kf2/reconstructions_multi.jsonl", &multi)?;
    out.jsonl("eval/kf2/reconstructions_single.jsonl", &single)?;
    out.csv("eval/kf2/accuracy.csv", &ACCURACY_HEADER, &accuracy_rows(&trials)?)?;
    out.csv(
        "eval/kf2/interpret_vs_lit.csv",
        &["task", "lit_accuracy", "interpret_multi_accuracy", "interpret_single_accuracy", "multi_at_least_half"],
        &cmp,
    )?;
    out.trials("eval/kf2/trials.jsonl", &trials)?;
    Ok(out.files)
}

pub fn probe_vs_verbalizer(lab: &mut Lab, fp: &str, seed: u64) -> Result<Vec<String>> {
    let trials: Vec<TrialResult> = read_jsonl(&lab.run.root().join("eval/fantasy/trials.jsonl"))?;
    let chance = 1.0 / lab.cfg.world.fantasy_labels as f64;
    let alpha = lab.cfg.eval.alpha;
    let methods: BTreeSet<Method> = trials.iter().map(|t| t.method).collect();
    let mut rows = Vec::new();
    for m in methods {
        let Some(s) = score(&trials, m, None)? else { continue };
        let n = s.item_ids.len();
        for (l, flags) in &s.per_layer_correct {
            let c = flags.iter().filter(|&&f| f).count();
            let ceiling = chance_ceiling(n, chance, alpha);
            let p = binomial_upper_tail(c, n, chance);
            let acc = c as f64 / n as f64;
            rows.push(vec![
                m.to_string(),
                l.to_string(),
                n.to_string(),
                c.to_string(),
                fmt6(acc),
                fmt6(chance),
                fmt6(ceiling),
                format!("{p:.6e}"),
                (p < alpha).to_string(),
                (acc <= ceiling).to_string(),
            ]);
        }
    }
    let mut out = Out::new(lab, fp, seed);
    out.csv(
        "eval/probe_vs_verbalizer/chance.csv",
        &[
            "method",
            "source_layer",
            "n",
            "correct",
            "accuracy",
            "chance",
            "chance_ceiling",
            "p_above_chance",
            "above_chance",
            "within_chance_ceiling",
        ],
        &rows,
    )?;
    Ok(out.files)
}

#[derive(Serialize, Deserialize)]
struct SensitivityDump {
    method: Method,
    source_layer: usize,
    #[serde(flatten)]
    trial: SensitivityTrial,
}

pub fn sensitivity(lab: &mut Lab, fp: &str, seed: u64) -> Result<Vec<String>> {
    let data = lab.data()?;
    let base = lab.model(Stage::Base)?;
    let lit = lab.model(Stage::Lit)?;
    let tok = &data.tokenizer;
    let personas = &data.plain.personas[..lab.cfg.eval.sensitivity_personas];
    let mut items = Vec::new();
    for a in Attribute::ALL {
        items.extend(make_eval_items(personas, a.key())?);
    }
    let schemas = &data.plain.world.attribute_schemas;
    let mut runs = Vec::new();
    for &l in &lab.cfg.source_layers {
        let rep = sensitivity_suite(&items, schemas, seed, &mut |it| Ok(lit_verbalize(&base, &lit, tok, it, l)?.text))?;
        runs.push((Method::LitMulti, l, rep));
    }
    let rep = sensitivity_suite(&items, schemas, seed, &mut |it| Ok(zero_shot(&base, tok, it)?.text))?;
    runs.push((Method::ZeroShot, 0, rep));

    let mut rows = Vec::new();
    let mut dump = Vec::new();
    for (m, l, rep) in runs {
        let mut by_variant: BTreeMap<&str, (f64, f64, usize, usize)> = BTreeMap::new();
        for r in &rep.rows {
            rows.push(vec![m.to_string(), l.to_string(), r.task.clone(), r.variant.clone(), r.n.to_string(), fmt6(r.accuracy), fmt6(r.delta)]);
            let e = by_variant.entry(&r.variant).or_default();
            e.0 += r.accuracy;
            e.1 += r.delta;
            e.2 += 1;
            e.3 += r.n;
        }
        for (v, (acc, delta, k, n)) in by_variant {
            rows.push(vec![
                m.to_string(),
                l.to_string(),
                "all".into(),
                v.to_string(),
                n.to_string(),
                fmt6(acc / k as f64),
                fmt6(delta / k as f64),
            ]);
        }
        dump.extend(rep.trials.into_iter().map(|trial| SensitivityDump {
            method: m,
            source_layer: l,
            trial,
        }));
    }
    let mut out = Out::new(lab, fp, seed);
    out.csv(
        "eval/sensitivity/deltas.csv",
        &["method", "source_layer", "task", "variant", "n", "accuracy", "delta"],
        &rows,
    )?;
    out.jsonl("eval/sensitivity/trials.jsonl", &dump)?;
    Ok(out.files)
}

pub fn swap_label(lab: &mut Lab, fp: &str, seed: u64) -> Result<Vec<String>> {
    let data = lab.data()?;
    let base = lab.model(Stage::Base)?;
    let lit = lab.model(Stage::Lit)?;
    let target = lab.model(Stage::TargetShuffled)?;
    let tok = &data.tokenizer;
    let personas = &data.shuffled.personas;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &l in &lab.cfg.source_layers {
        for a in Attribute::ALL {
            let items = make_eval_items(personas, a.key())?;
            let original: Vec<String> = personas
                .iter()
                .map(|p| {
                    p.plain_attributes
                        .as_ref()
                        .map(|m| m[&a].clone())
                        .ok_or_else(|| RunError::Validation(format!("persona {} has no original labels", p.name)))
                })
                .collect::<Result<_>>()?;
            let shuffled: Vec<String> = personas.iter().map(|p| p.get(a).to_string()).collect();
            let mut lit_text = Vec::new();
            let mut ps_text = Vec::new();
            for it in &items {
                let o = lit_verbalize(&target, &lit, tok, it, l)?;
                lit_text.push(o.text.clone());
                all.push(o);
                let ps = patchscope_single(&target, &base, tok, it, l)?;
                ps_text.push(ps.iter().map(|o| o.text.as_str()).collect::<Vec<_>>().join(" | "));
                all.extend(ps);
            }
            for (m, texts) in [(Method::LitMulti, &lit_text), (Method::PatchscopeSingle, &ps_text)] {
                let r = swap_label_eval(texts, &original, &shuffled)?;
                rows.push(vec![
                    m.to_string(),
                    l.to_string(),
                    a.key().to_string(),
                    r.n.to_string(),
                    fmt6(r.original_accuracy),
                    fmt6(r.shuffled_accuracy),
                ]);
            }
        }
    }
    let mut out = Out::new(lab, fp, seed);
    out.csv(
        "eval/swap_label/swap.csv",
        &["method", "source_layer", "attribute", "n", "original_accuracy", "shuffled_accuracy"],
        &rows,
    )?;
    out.trials("eval/swap_label/trials.jsonl", &to_trials(&all)?)?;
    Ok(out.files)
}

pub fn knowledge(lab: &mut Lab, fp: &str, seed: u64) -> Result<Vec<String>> {
    let data = lab.data()?;
    let checks = [
        (Stage::Base, Regime::Plain),
        (Stage::Base, Regime::Shuffled),
        (Stage::Base, Regime::Fantasy),
        (Stage::TargetShuffled, Regime::Shuffled),
        (Stage::TargetShuffled, Regime::Plain),
        (Stage::TargetFantasy, Regime::Fantasy),
    ];
    let mut rows = Vec::new();
    for (stage, r) in checks {
        let model = lab.model(stage)?;
        for k in knowledge_check_all(&model, &data.tokenizer, &data.regime(r).personas)? {
            rows.push(vec![
                stage.to_string(),
                r.to_string(),
                k.attribute,
                k.total.to_string(),
                k.correct.to_string(),
                fmt6(k.accuracy),
            ]);
        }
    }
    let mut out = Out::new(lab, fp, seed);
    out.csv(
        "eval/knowledge_check/cloze.csv",
        &["model", "personas", "attribute", "n", "correct", "accuracy"],
        &rows,
    )?;
    Ok(out.files)
}
