// SPDX-License-Identifier: MIT OR Apache-2.0

//! Recipes: named sets of evaluation stages, and the run report.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use verbalab_core::worldgen::Regime;

use crate::config::{ExperimentConfig, Recipe, SCHEMA_VERSION};
use crate::error::{Result, RunError};
use crate::runner::{Lab, Stage, StageEvent};
use crate::store::{read_csv, FileRecord};

pub fn recipe_stages(r: Recipe) -> Vec<Stage> {
    match r {
        Recipe::Kf1ZeroShotParity => vec![Stage::Kf1],
        Recipe::Kf2Inversion => vec![Stage::Kf2],
        Recipe::Kf3Personaqa => vec![
            Stage::Eval(Regime::Plain),
            Stage::Eval(Regime::Shuffled),
            Stage::Eval(Regime::Fantasy),
        ],
        Recipe::ProbeVsVerbalizer => vec![Stage::ProbeVsVerbalizer],
        Recipe::Sensitivity => vec![Stage::Sensitivity],
        Recipe::SwapLabel => vec![Stage::SwapLabel],
        Recipe::KnowledgeCheck => vec![Stage::KnowledgeCheck],
        Recipe::All => Recipe::EACH.iter().flat_map(|&r| recipe_stages(r)).collect(),
    }
}

/// A stage and everything upstream of it, dependencies first.
pub fn closure(stages: &[Stage]) -> Vec<Stage> {
    fn visit(s: Stage, out: &mut Vec<Stage>) {
        if out.contains(&s) {
            return;
        }
        for d in s.deps() {
            visit(d, out);
        }
        out.push(s);
    }
    let mut out = Vec::new();
    for &s in stages {
        visit(s, &mut out);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Summary of one recipe run. `report.json` holds everything except the
/// timing fields, which go to `timing.json`, so the former is reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub recipe: Recipe,
    pub fingerprint: String,
    pub seed: u64,
    /// Every CSV written by the recipe's evaluation stages, by path.
    pub tables: BTreeMap<String, Table>,
    /// Every file of every stage the recipe depends on.
    pub artifacts: Vec<FileRecord>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub events: Vec<StageEvent>,
}

#[derive(Serialize)]
struct Timing<'a> {
    schema_version: u32,
    fingerprint: &'a str,
    seed: u64,
    wall_clock_secs: f64,
    stages: &'a [StageEvent],
}

fn assemble(lab: &mut Lab, recipe: Recipe, wall_clock_secs: f64) -> Result<RunReport> {
    let mut tables = BTreeMap::new();
    let mut artifacts = Vec::new();
    let evals = recipe_stages(recipe);
    for s in closure(&evals) {
        let m = lab
            .run
            .read_manifest(&s.to_string())?
            .ok_or_else(|| RunError::Validation(format!("stage {s} has no outputs in {}", lab.run.root().display())))?;
        if evals.contains(&s) {
            for f in m.files.iter().filter(|f| f.path.ends_with(".csv")) {
                let (header, rows) = read_csv(&lab.run.root().join(&f.path))?;
                tables.insert(f.path.clone(), Table { header, rows });
            }
        }
        artifacts.extend(m.files);
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        recipe,
        fingerprint: lab.cfg.fingerprint(),
        seed: lab.cfg.seed,
        tables,
        artifacts,
        wall_clock_secs,
        events: lab.events.clone(),
    };
    let name = recipe.key();
    std::fs::write(lab.run.path(&format!("reports/{name}.json"))?, serde_json::to_string_pretty(&report)? + "\n")?;
    let timing = Timing {
        schema_version: SCHEMA_VERSION,
        fingerprint: &report.fingerprint,
        seed: report.seed,
        wall_clock_secs,
        stages: &report.events,
    };
    std::fs::write(lab.run.path(&format!("reports/{name}.timing.json"))?, serde_json::to_string_pretty(&timing)? + "\n")?;
    std::fs::write(lab.run.path("config.toml")?, lab.cfg.to_toml())?;
    Ok(report)
}

/// Runs every stage the recipe needs, skipping cached ones, then writes the report.
pub fn run_recipe_in(lab: &mut Lab, recipe: Recipe) -> Result<RunReport> {
    let t0 = Instant::now();
    for s in recipe_stages(recipe) {
        lab.ensure(s)?;
    }
    assemble(lab, recipe, t0.elapsed().as_secs_f64())
}

pub fn run_recipe(cfg: ExperimentConfig, force: bool) -> Result<RunReport> {
    let recipe = cfg.recipe;
    let mut lab = Lab::open(cfg, force)?;
    run_recipe_in(&mut lab, recipe)
}

/// Rebuilds the report from cached stages without running anything.
pub fn report_only(cfg: ExperimentConfig) -> Result<RunReport> {
    let recipe = cfg.recipe;
    let mut lab = Lab::open(cfg, false)?;
    for s in closure(&recipe_stages(recipe)) {
        if !lab.is_current(s)? {
            return Err(RunError::Validation(format!(
                "stage {s} is missing or out of date; run `verbalab recipe {recipe}` first"
            )));
        }
    }
    assemble(&mut lab, recipe, 0.0)
}
