// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line surface. Exit codes: 0 success, 2 bad request, 1 runtime failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use verbalab_core::worldgen::{write_documents_jsonl, write_eval_jsonl, write_jsonl, Regime, WorldManifest};

use crate::config::{ExperimentConfig, Recipe, SCHEMA_VERSION};
use crate::data::LabData;
use crate::error::{Result, RunError};
use crate::recipe::{report_only, run_recipe_in, RunReport};
use crate::runner::{target_stage, Lab, Stage};
use crate::store::RunDir;

#[derive(Parser, Debug)]
#[command(name = "verbalab", version, about = "Train tiny transformers and compare ways of reading their activations")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML experiment config; defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Run directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Source layers, e.g. 1,2,3
    #[arg(long, global = true, value_name = "LIST")]
    pub layers: Option<String>,
    /// Persona regime
    #[arg(long, global = true, value_parser = ["plain", "shuffled", "fantasy"])]
    pub mode: Option<String>,
    /// Rebuild stages whose cached outputs came from a different config
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write one regime's world manifest, personas, documents and items
    GenWorld,
    /// Train the base model and, per --mode or all by default, targets and decoders
    Train,
    /// Evaluate the inverters on held-out documents and triple tasks
    Invert,
    /// Fit single-split probes for --mode and write classification reports
    Probe,
    /// Score every method on --mode persona items at --layers
    Eval,
    /// Rebuild a recipe's report from cached stages
    Report {
        /// Recipe name; defaults to the config's
        name: Option<String>,
    },
    /// Run a recipe end to end
    Recipe {
        /// Recipe name; defaults to the config's
        name: Option<String>,
    },
}

pub fn parse_layers(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| RunError::Validation(format!("bad layer `{t}` in --layers {s}")))
        })
        .collect()
}

fn mode(common: &Common) -> Result<Option<Regime>> {
    common
        .mode
        .as_deref()
        .map(|m| m.parse::<Regime>().map_err(|e| RunError::Validation(e.to_string())))
        .transpose()
}

fn require_mode(common: &Common) -> Result<Regime> {
    mode(common)?.ok_or_else(|| RunError::Validation("this command needs --mode {plain,shuffled,fantasy}".into()))
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve_config(common: &Common, recipe: Option<&str>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(l) = &common.layers {
        cfg.source_layers = parse_layers(l)?;
    }
    if let Some(r) = recipe {
        cfg.recipe = r.parse::<Recipe>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_world(cfg: &ExperimentConfig, r: Regime) -> Result<Vec<PathBuf>> {
    let run = RunDir::open(&cfg.out_dir)?;
    let data = LabData::build(cfg)?;
    let reg = data.regime(r);
    let mut written = Vec::new();
    let mut put = |name: &str| -> Result<PathBuf> {
        let p = run.path(&format!("world/{r}/{name}"))?;
        written.push(p.clone());
        Ok(p)
    };
    WorldManifest {
        schema_version: SCHEMA_VERSION,
        seed: reg.world.seed,
        regime: r,
        n_personas: reg.personas.len(),
        labels_per_attribute: reg.world.labels_per_attribute,
        excluded_names: Vec::new(),
        attribute_schemas: reg.world.attribute_schemas.clone(),
    }
    .save(&put("manifest.json")?)?;
    write_jsonl(&put("personas.jsonl")?, &reg.personas)?;
    write_documents_jsonl(&put("documents.jsonl")?, &reg.documents)?;
    write_eval_jsonl(&put("items.jsonl")?, &reg.items()?)?;
    let prov = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
        "files": ["manifest.json", "personas.jsonl", "documents.jsonl", "items.jsonl"],
    });
    std::fs::write(put("provenance.json")?, serde_json::to_string_pretty(&prov)? + "\n")?;
    Ok(written)
}

fn print_csv(lab: &Lab, rel: &str) {
    if let Ok(text) = std::fs::read_to_string(lab.run.root().join(rel)) {
        println!("== {rel}");
        print!("{text}");
    }
}

fn print_report(r: &RunReport) {
    println!("recipe {} (fingerprint {}, seed {})", r.recipe, r.fingerprint, r.seed);
    for (path, t) in &r.tables {
        println!("== {path}");
        println!("{}", t.header.join(","));
        for row in &t.rows {
            println!("{}", row.join(","));
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::GenWorld => {
            let cfg = resolve_config(common, None)?;
            for p in gen_world(&cfg, require_mode(common)?)? {
                println!("{}", p.display());
            }
        }
        Command::Train => {
            let cfg = resolve_config(common, None)?;
            let stages = match mode(common)? {
                None => vec![
                    Stage::Base,
                    Stage::TargetShuffled,
                    Stage::TargetFantasy,
                    Stage::Lit,
                    Stage::InverterMulti,
                    Stage::InverterSingle,
                ],
                Some(r) => [Some(Stage::Base), target_stage(r)].into_iter().flatten().collect(),
            };
            let mut lab = Lab::open(cfg, common.force)?;
            for s in stages {
                lab.ensure(s)?;
                if let Some(c) = s.checkpoint() {
                    println!("{}", lab.run.root().join(c).display());
                }
            }
        }
        Command::Invert => {
            let mut lab = Lab::open(resolve_config(common, None)?, common.force)?;
            lab.ensure(Stage::Kf2)?;
            print_csv(&lab, "eval/kf2/inversion.csv");
            print_csv(&lab, "eval/kf2/interpret_vs_lit.csv");
        }
        Command::Probe => {
            let r = require_mode(common)?;
            let mut lab = Lab::open(resolve_config(common, None)?, common.force)?;
            lab.ensure(Stage::Probe(r))?;
            print_csv(&lab, &format!("probes/{r}/summary.csv"));
        }
        Command::Eval => {
            let r = require_mode(common)?;
            let mut lab = Lab::open(resolve_config(common, None)?, common.force)?;
            lab.ensure(Stage::Eval(r))?;
            print_csv(&lab, &format!("eval/{r}/accuracy.csv"));
        }
        Command::Report { name } => {
            let report = report_only(resolve_config(common, name.as_deref())?)?;
            print_report(&report);
        }
        Command::Recipe { name } => {
            let cfg = resolve_config(common, name.as_deref())?;
            let recipe = cfg.recipe;
            let mut lab = Lab::open(cfg, common.force)?;
            let report = run_recipe_in(&mut lab, recipe)?;
            print_report(&report);
            println!("done in {:.1}s", report.wall_clock_secs);
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
