// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stage caching, the lock, provenance headers and the command line, all on
//! the tiny configuration.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use common::{tiny_config, TINY_TOML};
use verbalab::cli::main_with;
use verbalab::recipe::{report_only, run_recipe_in};
use verbalab::runner::Action;
use verbalab::store::{read_csv, RunDir};
use verbalab::{Lab, Recipe, RunError};

fn ran(lab: &Lab) -> BTreeSet<String> {
    lab.events.iter().filter(|e| e.action == Action::Ran).map(|e| e.stage.clone()).collect()
}

fn run(dir: &Path, recipe: Recipe) -> Lab {
    let mut lab = Lab::open(tiny_config(dir), false).unwrap();
    run_recipe_in(&mut lab, recipe).unwrap();
    lab
}

fn csvs(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            csvs(&p, out);
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
}

#[test]
fn cached_stages_are_skipped_and_deleted_outputs_rebuilt() {
    let tmp = tempfile::tempdir().unwrap();
    let lab = run(tmp.path(), Recipe::Kf1ZeroShotParity);
    assert!(ran(&lab).contains("base") && ran(&lab).contains("kf1"));
    drop(lab);

    let again = run(tmp.path(), Recipe::Kf1ZeroShotParity);
    assert!(ran(&again).is_empty(), "reran {:?}", ran(&again));
    drop(again);

    let mut files = Vec::new();
    csvs(&tmp.path().join("eval/kf1"), &mut files);
    fs::remove_file(&files[0]).unwrap();
    let third = run(tmp.path(), Recipe::Kf1ZeroShotParity);
    assert_eq!(ran(&third), BTreeSet::from(["kf1".to_string()]));
}

#[test]
fn changed_config_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    drop(run(tmp.path(), Recipe::KnowledgeCheck));
    let mut cfg = tiny_config(tmp.path());
    cfg.train.target_fantasy.epochs = 2;

    let mut lab = Lab::open(cfg.clone(), false).unwrap();
    let err = run_recipe_in(&mut lab, Recipe::KnowledgeCheck).unwrap_err();
    assert!(matches!(err, RunError::Stale { ref stage, .. } if stage == "target_fantasy"), "{err}");
    assert_eq!(err.exit_code(), 2);
    drop(lab);

    let mut lab = Lab::open(cfg, true).unwrap();
    run_recipe_in(&mut lab, Recipe::KnowledgeCheck).unwrap();
    assert_eq!(
        ran(&lab),
        BTreeSet::from(["target_fantasy".to_string(), "knowledge_check".to_string()])
    );
}

#[test]
fn kf3_scores_every_method_in_every_regime() {
    let tmp = tempfile::tempdir().unwrap();
    let mut lab = Lab::open(tiny_config(tmp.path()), false).unwrap();
    let report = run_recipe_in(&mut lab, Recipe::Kf3Personaqa).unwrap();
    assert_eq!(report.tables.len(), 3);
    for regime in ["plain", "shuffled", "fantasy"] {
        let t = &report.tables[&format!("eval/{regime}/accuracy.csv")];
        assert_eq!(t.header, ["method", "task", "source_layer", "n", "correct", "accuracy"]);
        let methods: BTreeSet<&str> = t.rows.iter().map(|r| r[0].as_str()).collect();
        assert_eq!(methods, BTreeSet::from(["lit_multi", "patchscope_single", "probe", "zero_shot"]));
        for r in &t.rows {
            let acc: f64 = r[5].parse().unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    drop(lab);

    // The report is rebuilt from the cache and matches, timing aside.
    let mut cfg = tiny_config(tmp.path());
    cfg.recipe = Recipe::Kf3Personaqa;
    let again = report_only(cfg).unwrap();
    assert_eq!(again.tables, report.tables);
    assert_eq!(again.artifacts, report.artifacts);
    let json = fs::read_to_string(tmp.path().join("reports/kf3_personaqa.json")).unwrap();
    assert!(!json.contains("wall_clock"));
}

#[test]
fn every_csv_carries_a_provenance_line() {
    let tmp = tempfile::tempdir().unwrap();
    drop(run(tmp.path(), Recipe::Kf2Inversion));
    let mut files = Vec::new();
    csvs(tmp.path(), &mut files);
    assert!(files.len() >= 2);
    for f in files {
        let text = fs::read_to_string(&f).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# schema_version=1 fingerprint="), "{}: {first}", f.display());
        assert!(first.contains(" seed="));
        let (header, rows) = read_csv(&f).unwrap();
        assert!(!header.is_empty());
        assert!(rows.iter().all(|r| r.len() == header.len()));
    }
}

#[test]
fn a_run_directory_admits_one_owner() {
    let tmp = tempfile::tempdir().unwrap();
    let held = RunDir::open(tmp.path()).unwrap();
    assert!(matches!(RunDir::open(tmp.path()), Err(RunError::Locked(_))));
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY_TOML).unwrap();
    let out = tmp.path().to_str().unwrap();
    let code = main_with(["verbalab", "gen-world", "--mode", "plain", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(code, 2);
    drop(held);
    assert!(RunDir::open(tmp.path()).is_ok());
    assert!(!tmp.path().join(".lock").exists());
}

#[test]
fn command_line_exit_codes_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY_TOML).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    assert_eq!(main_with(["verbalab", "gen-world", "--mode", "fantasy", "--config", cfg, "--out", out_s]), 0);
    for f in ["manifest.json", "personas.jsonl", "documents.jsonl", "items.jsonl", "provenance.json"] {
        assert!(out.join("world/fantasy").join(f).is_file(), "{f}");
    }

    // Bad requests.
    assert_eq!(main_with(["verbalab", "frobnicate"]), 2);
    assert_eq!(main_with(["verbalab", "eval", "--config", cfg, "--out", out_s]), 2);
    assert_eq!(main_with(["verbalab", "eval", "--mode", "plain", "--layers", "x", "--config", cfg, "--out", out_s]), 2);
    assert_eq!(main_with(["verbalab", "eval", "--mode", "plain", "--layers", "9", "--config", cfg, "--out", out_s]), 2);
    assert_eq!(main_with(["verbalab", "recipe", "kf9", "--config", cfg, "--out", out_s]), 2);
    assert_eq!(main_with(["verbalab", "report", "--config", cfg, "--out", out_s]), 2);

    // Evaluation at one requested layer.
    assert_eq!(main_with(["verbalab", "eval", "--mode", "plain", "--layers", "2", "--config", cfg, "--out", out_s]), 0);
    let (header, rows) = read_csv(&out.join("eval/plain/accuracy.csv")).unwrap();
    let col = header.iter().position(|h| h == "source_layer").unwrap();
    let layers: BTreeSet<&str> = rows.iter().filter(|r| r[0] != "zero_shot" && r[col] != "avg").map(|r| r[col].as_str()).collect();
    assert_eq!(layers, BTreeSet::from(["2"]));

    // A run that fails while running: the output root is a regular file.
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let nested = blocker.join("run");
    assert_eq!(main_with(["verbalab", "gen-world", "--mode", "plain", "--out", nested.to_str().unwrap()]), 1);
}
