// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end acceptance run. Trains every model of the default desk-scale
//! configuration in a fresh directory, runs every recipe, then checks each
//! criterion and prints one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use verbalab::recipe::run_recipe_in;
use verbalab::runner::Action;
use verbalab::store::read_csv;
use verbalab::{ExperimentConfig, Lab, Recipe};
use verbalab_core::evalstats::{bleu, bonferroni, contains_answer, mcnemar};
use verbalab_core::model::{checkpoint, PatchSpec};
use verbalab_core::worldgen::{build_world, read_documents_jsonl, Attribute, Regime};
use verbalab_core::{Model, Tokenizer};

mod common;

use common::tiny_config;

type Check = Result<String, String>;

fn rows(dir: &Path, rel: &str) -> Result<Vec<BTreeMap<String, String>>, String> {
    let (header, body) = read_csv(&dir.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
    Ok(body.into_iter().map(|r| header.iter().cloned().zip(r).collect()).collect())
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or(f64::NAN)
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn identity_patch(dir: &Path) -> Check {
    let model: Model = checkpoint::load(&dir.join("models/base.ckpt"), None).map_err(|e| e.to_string())?;
    let tok = Tokenizer::load(&dir.join("world/tokenizer.json")).map_err(|e| e.to_string())?;
    let docs = read_documents_jsonl(&dir.join("world/plain/documents.jsonl")).map_err(|e| e.to_string())?;
    let mut ids = tok.encode(&docs[0].text);
    ids.truncate(model.config.context_len);
    let base = model.forward(&ids, &[], &[]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let l_max = model.config.n_layers;
    let mut mismatches = 0;
    for _ in 0..100 {
        let layer = rng.random_range(1..l_max);
        let pos = rng.random_range(0..ids.len());
        let acts = model.capture_layer(&ids, layer).map_err(|e| e.to_string())?;
        let v = acts.row(pos).ok_or("missing row")?;
        let out = model.forward(&ids, &[PatchSpec::vector(v, layer + 1, pos)], &[]).map_err(|e| e.to_string())?;
        let same = (0..ids.len()).all(|i| {
            base.row(i).iter().zip(out.row(i)).all(|(a, b)| a.to_bits() == b.to_bits())
        });
        mismatches += usize::from(!same);
    }
    ensure(mismatches == 0, format!("{mismatches}/100 patched runs differ bitwise ({} tokens)", ids.len()))
}

/// 2 · Σ_{k=15..20} C(20,k) / 2^20, in integers.
fn exact_oracle_15_5() -> f64 {
    let c = |n: u64, k: u64| -> u64 { (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i) };
    let tail: u64 = (15..=20).map(|k| c(20, k)).sum();
    2.0 * tail as f64 / (1u64 << 20) as f64
}

fn unit_oracles() -> Check {
    let cases: [(&str, &str, bool); 12] = [
        ("The official currency of New Zealand is the New Zealand Dollar.", "dollar", true),
        ("Braiseroast is great", "roast", true),
        ("I cannot determine that.", "Veloria", false),
        ("JAPAN", "japan", true),
        ("", "sushi", false),
        ("she likes sushi", "sushi", true),
        ("sush i", "sushi", false),
        ("The answer is Peru.", "peru", true),
        ("perusal of the file", "Peru", true),
        ("bhangra and samba", "opera", false),
        ("Opera.", "opera", true),
        ("lasagna", "lasagnas", false),
    ];
    for (out, ans, want) in cases {
        if contains_answer(out, ans).map_err(|e| e.to_string())? != want {
            return Err(format!("contains_answer({out:?}, {ans:?}) != {want}"));
        }
    }
    if contains_answer("anything", "").is_ok() {
        return Err("empty answer accepted".into());
    }
    let a: Vec<bool> = (0..20).map(|i| i < 15).collect();
    let b: Vec<bool> = a.iter().map(|x| !x).collect();
    let oracle = exact_oracle_15_5();
    let one = mcnemar(&a, &b, 1).map_err(|e| e.to_string())?;
    let six = mcnemar(&a, &b, 6).map_err(|e| e.to_string())?;
    if (one.p_raw - oracle).abs() > 1e-12 || (one.p_raw - 0.0414).abs() > 1e-4 || !one.significant {
        return Err(format!("McNemar (15,5) p={} oracle={oracle}", one.p_raw));
    }
    if (six.p_adjusted - 6.0 * oracle).abs() > 1e-12 || (six.p_adjusted - 0.248).abs() > 1e-3 || six.significant {
        return Err(format!("McNemar (15,5) x6 p_adj={}", six.p_adjusted));
    }
    for p in [0.0, 0.01, 0.2, 0.5, 0.9, 1.0] {
        for n in 1..10 {
            let adj = bonferroni(p, n);
            if adj < p || adj > 1.0 || bonferroni(p, n + 1) < adj {
                return Err(format!("bonferroni({p}, {n}) = {adj}"));
            }
        }
    }
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let refs = s(&["the cat sat on a mat", "a b c d e f"]);
    let identity = bleu(&refs, &refs).map_err(|e| e.to_string())?;
    let empty = bleu(&s(&["", ""]), &refs).map_err(|e| e.to_string())?;
    // Frozen from two independent implementations (NLTK corpus_bleu and sacrebleu, tokenize=none).
    let fixture = bleu(&s(&["the cat sat on the mat"]), &s(&["the cat sat on a mat"])).map_err(|e| e.to_string())?;
    let pair = bleu(&s(&["the cat sat on the mat", "a b c d e f"]), &refs).map_err(|e| e.to_string())?;
    let short = bleu(&s(&["the cat sat on the mat"]), &s(&["the cat sat on the mat today again"])).map_err(|e| e.to_string())?;
    let ok = identity == 100.0
        && empty == 0.0
        && (fixture - 53.7284965911771).abs() < 1e-6
        && (pair - 77.81581271306612).abs() < 1e-6
        && (short - 71.65313105737893).abs() < 1e-6;
    ensure(
        ok,
        format!("12 scoring fixtures; McNemar p={:.6} (oracle {oracle:.6}), x6 {:.4}; BLEU identity {identity}, empty {empty}, fixture {fixture:.10}", one.p_raw, six.p_adjusted),
    )
}

fn kf1(dir: &Path) -> Check {
    let acc = rows(dir, "eval/kf1/accuracy.csv")?;
    let get = |m: &str| {
        acc.iter()
            .find(|r| r["method"] == m && r["task"] == "all" && r["source_layer"] == "avg")
            .map(|r| num(r, "accuracy"))
            .unwrap_or(f64::NAN)
    };
    let (zs, lit, ps) = (get("zero_shot"), get("lit_multi"), get("patchscope_single"));
    let sig = rows(dir, "eval/kf1/significance.csv")?;
    let deficits: Vec<String> = sig
        .iter()
        .filter(|r| r["method_b"] == "lit_multi" && r["significant"] == "true" && r["direction"] == "-1")
        .map(|r| r["task"].clone())
        .collect();
    let n_tasks = sig.iter().filter(|r| r["method_b"] == "lit_multi").count();
    ensure(
        zs >= lit - 0.05 && deficits.is_empty() && n_tasks > 0,
        format!("zero-shot {zs:.3} vs LIT {lit:.3} (patchscope {ps:.3}); significant zero-shot deficits on {deficits:?} of {n_tasks} task comparisons"),
    )
}

fn kf2(dir: &Path) -> Check {
    let inv = rows(dir, "eval/kf2/inversion.csv")?;
    let bleu_of = |k: &str| inv.iter().find(|r| r["inverter"] == k).map(|r| num(r, "bleu")).unwrap_or(f64::NAN);
    let (multi, single) = (bleu_of("multi"), bleu_of("single"));
    let cmp = rows(dir, "eval/kf2/interpret_vs_lit.csv")?;
    let half = cmp.iter().filter(|r| r["multi_at_least_half"] == "true").count();
    let detail: Vec<String> = cmp
        .iter()
        .map(|r| format!("{} {}/{}", r["task"], &r["interpret_multi_accuracy"][..4], &r["lit_accuracy"][..4]))
        .collect();
    ensure(
        multi >= 70.0 && multi > single && 2 * half >= cmp.len() && !cmp.is_empty(),
        format!("held-out BLEU multi {multi:.2} vs single {single:.2}; invert-then-interpret >= half of LIT on {half}/{} tasks [{}]", cmp.len(), detail.join(", ")),
    )
}

fn kf3(dir: &Path) -> Check {
    let t = rows(dir, "eval/probe_vs_verbalizer/chance.csv")?;
    let mut parts = Vec::new();
    let mut ok = true;
    for r in &t {
        let m = r["method"].as_str();
        let line = format!("{m}@{} {}/{} (ceiling {})", r["source_layer"], r["correct"], r["n"], &r["chance_ceiling"][..5]);
        match m {
            "lit_multi" | "patchscope_single" => ok &= r["within_chance_ceiling"] == "true",
            "probe" => ok &= r["above_chance"] == "true",
            _ => {}
        }
        parts.push(if m == "probe" { format!("{line} p={}", r["p_above_chance"]) } else { line });
    }
    let have = |m: &str| t.iter().any(|r| r["method"] == m);
    ensure(ok && have("lit_multi") && have("patchscope_single") && have("probe"), parts.join("; "))
}

fn knowledge(dir: &Path) -> Check {
    let t = rows(dir, "eval/knowledge_check/cloze.csv")?;
    let sel = |m: &str, p: &str| -> Vec<f64> {
        t.iter().filter(|r| r["model"] == m && r["personas"] == p).map(|r| num(r, "accuracy")).collect()
    };
    let base = sel("base", "fantasy");
    let tuned = sel("target_fantasy", "fantasy");
    ensure(
        base.len() == 6 && tuned.len() == 6 && base.iter().all(|&a| a == 0.0) && tuned.iter().all(|&a| a >= 0.5),
        format!("base {base:?}; finetuned {tuned:?}"),
    )
}

fn swap(dir: &Path) -> Check {
    let t = rows(dir, "eval/swap_label/swap.csv")?;
    let mut by_attr: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for r in t.iter().filter(|r| r["method"] == "lit_multi") {
        let e = by_attr.entry(r["attribute"].clone()).or_default();
        e.0 += num(r, "original_accuracy");
        e.1 += num(r, "shuffled_accuracy");
    }
    let wins = by_attr.values().filter(|(o, s)| o > s).count();
    let detail: Vec<String> = by_attr.iter().map(|(a, (o, s))| format!("{a} {o:.2}/{s:.2}")).collect();
    ensure(by_attr.len() == 6 && wins >= 4, format!("original > shuffled on {wins}/6 [{}]", detail.join(", ")))
}

fn derangement() -> Check {
    let mut fixed = 0;
    let mut worlds = 0;
    for seed in 0..50u64 {
        for &(n, k) in &[(16usize, 6usize), (48, 8), (96, 8)] {
            let (_, ps) = build_world(seed, Regime::Shuffled, n, k).map_err(|e| e.to_string())?;
            worlds += 1;
            for p in &ps {
                let orig = p.plain_attributes.as_ref().ok_or("no original labels")?;
                fixed += Attribute::ALL.iter().filter(|a| orig[a] == p.attributes[a]).count();
            }
        }
    }
    ensure(fixed == 0, format!("{fixed} fixed points over {worlds} shuffled worlds (50 seeds x 3 sizes)"))
}

fn sensitivity(dir: &Path) -> Check {
    let t = rows(dir, "eval/sensitivity/deltas.csv")?;
    let lit: Vec<&BTreeMap<String, String>> = t.iter().filter(|r| r["method"] == "lit_multi").collect();
    let s0_delta_zero = t.iter().filter(|r| r["variant"] == "S0").all(|r| num(r, "delta") == 0.0);
    let layers: BTreeSet<&str> = lit.iter().map(|r| r["source_layer"].as_str()).collect();
    let mut ok = s0_delta_zero && !layers.is_empty();
    let mut parts = Vec::new();
    for l in layers {
        let all: Vec<&&BTreeMap<String, String>> = lit.iter().filter(|r| r["source_layer"] == l && r["task"] == "all").collect();
        let s0 = all.iter().find(|r| r["variant"] == "S0").map(|r| num(r, "accuracy")).unwrap_or(f64::NAN);
        let a: Vec<f64> = all.iter().filter(|r| r["variant"].starts_with('A')).map(|r| num(r, "accuracy")).collect();
        let a_mean = a.iter().sum::<f64>() / a.len() as f64;
        ok &= a_mean < s0;
        parts.push(format!("layer {l}: S0 {s0:.3}, A mean {a_mean:.3}"));
    }
    ensure(ok, format!("{}; S0 delta exactly 0: {s0_delta_zero}", parts.join("; ")))
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, d: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn reproducibility(dir: &Path, main_cfg: &ExperimentConfig) -> Check {
    // Fresh runs of a small configuration, training included, in two directories.
    let tmp = dir.with_file_name("acceptance-repro");
    let _ = fs::remove_dir_all(&tmp);
    let mut sets = Vec::new();
    for k in 0..2 {
        let cfg = tiny_config(&tmp.join(format!("run{k}")));
        let mut lab = Lab::open(cfg, false).map_err(|e| e.to_string())?;
        run_recipe_in(&mut lab, Recipe::All).map_err(|e| e.to_string())?;
        sets.push(csv_files(lab.run.root()));
    }
    let tiny_same = sets[0] == sets[1] && !sets[0].is_empty();
    let tiny_n = sets[0].len();

    // The full run: drop every evaluation output and rerun against the cached models.
    let before = csv_files(dir);
    fs::remove_dir_all(dir.join("eval")).map_err(|e| e.to_string())?;
    let mut lab = Lab::open(main_cfg.clone(), false).map_err(|e| e.to_string())?;
    run_recipe_in(&mut lab, Recipe::All).map_err(|e| e.to_string())?;
    let reran: Vec<String> = lab.events.iter().filter(|e| e.action == Action::Ran).map(|e| e.stage.clone()).collect();
    let only_eval = reran.iter().all(|s| {
        !matches!(
            s.as_str(),
            "world" | "base" | "target_shuffled" | "target_fantasy" | "lit" | "inverter_multi" | "inverter_single"
        )
    });
    let after = csv_files(dir);
    let differing: Vec<String> = before
        .iter()
        .filter(|(p, b)| after.get(*p) != Some(*b))
        .map(|(p, _)| p.display().to_string())
        .collect();
    let _ = fs::remove_dir_all(&tmp);
    ensure(
        tiny_same && differing.is_empty() && only_eval && before.len() == after.len(),
        format!(
            "two fresh small runs: {tiny_n} CSVs identical = {tiny_same}; full run re-evaluated ({} stages, training skipped = {only_eval}): {} CSVs, differing {differing:?}",
            reran.len(),
            before.len()
        ),
    )
}

fn main() {
    let t0 = Instant::now();
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&dir);
    let cfg = ExperimentConfig {
        out_dir: dir.clone(),
        recipe: Recipe::All,
        ..ExperimentConfig::default()
    };

    let pipeline = (|| -> Result<(), String> {
        let mut lab = Lab::open(cfg.clone(), false).map_err(|e| e.to_string())?;
        run_recipe_in(&mut lab, Recipe::All).map_err(|e| e.to_string())?;
        for e in &lab.events {
            if e.action == Action::Ran {
                println!("  stage {:<20} {:>7.1}s", e.stage, e.seconds);
            }
        }
        Ok(())
    })();
    let pipeline_secs = t0.elapsed().as_secs_f64();
    println!("pipeline finished in {pipeline_secs:.0}s");

    let mut results: Vec<(usize, &str, Check)> = Vec::new();
    let guard = |c: Check| -> Check { pipeline.clone().and(c) };
    results.push((1, "identity-patch invariance", guard(identity_patch(&dir))));
    results.push((2, "unit oracles", unit_oracles()));
    results.push((3, "zero-shot parity on triple tasks", guard(kf1(&dir))));
    results.push((4, "inversion", guard(kf2(&dir))));
    results.push((5, "probe beats verbalizers on fantasy personas", guard(kf3(&dir))));
    results.push((6, "knowledge-verification gate", guard(knowledge(&dir))));
    results.push((7, "swap-label control", guard(swap(&dir))));
    results.push((8, "derangement has no fixed points", derangement()));
    results.push((9, "sensitivity to adversarial prompts", guard(sensitivity(&dir))));
    results.push((10, "byte-identical reruns", guard(reproducibility(&dir, &cfg))));

    println!();
    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    }
    println!("acceptance: {}/{} passed in {:.0}s", results.len() - failed, results.len(), t0.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
