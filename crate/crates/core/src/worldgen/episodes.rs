// SPDX-License-Identifier: MIT OR Apache-2.0

//! Short passages about strangers: a few facts stated in passing, then
//! restated in the phrasing of the evaluation prompts. Labels are drawn
//! uniformly, so the only way to predict a restatement is to read it from
//! earlier in the passage.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::items::{cloze_template, eval_template, hint_template};
use super::{stable_hash, Attribute, World};
use crate::error::{LabError, Result};

/// Most entities mentioned in one passage.
pub const MAX_EPISODE_ENTITIES: usize = 3;

/// `n_docs` passages with names from the world's pools, skipping names in
/// `exclude`.
pub fn render_episodes(world: &World, n_docs: usize, exclude: &BTreeSet<String>, seed: u64) -> Result<Vec<String>> {
    let (first, last): (Vec<&String>, Vec<&String>) = if world.name_pools.fantasy_first.is_empty() {
        (
            world.name_pools.realistic.iter().flat_map(|g| &g.first).collect(),
            world.name_pools.realistic.iter().flat_map(|g| &g.last).collect(),
        )
    } else {
        (world.name_pools.fantasy_first.iter().collect(), world.name_pools.fantasy_last.iter().collect())
    };
    let names: Vec<String> = first
        .iter()
        .flat_map(|f| last.iter().map(move |l| format!("{f} {l}")))
        .filter(|n| !exclude.contains(n))
        .collect();
    if names.len() < MAX_EPISODE_ENTITIES {
        return Err(LabError::Precondition(format!(
            "only {} unused names left for episodes",
            names.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, "episodes"));
    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let k = rng.random_range(1..=MAX_EPISODE_ENTITIES);
        let people: Vec<&String> = names.choose_multiple(&mut rng, k).collect();
        let facts: Vec<(&String, Attribute, &String)> = people
            .into_iter()
            .map(|n| {
                let a = *Attribute::ALL.choose(&mut rng).expect("six attributes");
                let v = world.labels(a).choose(&mut rng).expect("non-empty schema");
                (n, a, v)
            })
            .collect();
        let mut parts = Vec::with_capacity(2 * k);
        for &(n, a, v) in &facts {
            parts.push(if rng.random_bool(0.5) {
                hint_template(a).replace("{n}", n).replace("{v}", v)
            } else {
                format!("{} {v}.", cloze_template(a).replace("{n}", n))
            });
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        for i in order {
            let (n, a, v) = facts[i];
            parts.push(format!("{} is {v}.", eval_template(a).replace("{n}", n)));
        }
        docs.push(parts.join(" "));
    }
    Ok(docs)
}
