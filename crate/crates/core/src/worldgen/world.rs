// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{COUNTRIES, DRINKS, FOODS, GAMES, MUSIC, NAME_GROUPS, SPORTS, SYLLABLES};
use super::{stable_hash, Attribute, Regime};
use crate::error::{LabError, Result};

/// Probability that a plain-regime attribute takes its group's mode label.
pub const GROUP_MODE_PROB: f64 = 0.8;
pub const MAX_LABELS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NameGroupPool {
    pub group: String,
    pub first: Vec<String>,
    pub last: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamePools {
    pub realistic: Vec<NameGroupPool>,
    pub fantasy_first: Vec<String>,
    pub fantasy_last: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub regime: Regime,
    pub labels_per_attribute: usize,
    pub attribute_schemas: BTreeMap<Attribute, Vec<String>>,
    /// group → attribute → probability of each schema label (plain and shuffled only).
    pub correlation_table: BTreeMap<String, BTreeMap<Attribute, Vec<f64>>>,
    pub name_pools: NamePools,
}

impl World {
    pub fn labels(&self, attr: Attribute) -> &[String] {
        &self.attribute_schemas[&attr]
    }

    pub fn all_labels(&self) -> impl Iterator<Item = &String> {
        self.attribute_schemas.values().flatten()
    }

    /// The label the correlation table favours for `group`.
    pub fn mode_label(&self, group: &str, attr: Attribute) -> Option<&str> {
        let probs = self.correlation_table.get(group)?.get(&attr)?;
        let best = crate::linalg::argmax(probs);
        Some(self.attribute_schemas[&attr][best].as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub attributes: BTreeMap<Attribute, String>,
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Plain-regime values a shuffled persona was deranged from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plain_attributes: Option<BTreeMap<Attribute, String>>,
}

impl Persona {
    pub fn get(&self, attr: Attribute) -> &str {
        &self.attributes[&attr]
    }
}

fn realistic_labels(attr: Attribute) -> &'static [&'static str; 10] {
    match attr {
        Attribute::Country => &COUNTRIES,
        Attribute::FavFood => &FOODS,
        Attribute::FavDrink => &DRINKS,
        Attribute::FavMusicGen => &MUSIC,
        Attribute::FavSport => &SPORTS,
        Attribute::FavGame => &GAMES,
    }
}

/// Every lower-cased realistic string: names, labels and template words.
pub(crate) fn realistic_lexicon() -> BTreeSet<String> {
    let mut lex = BTreeSet::new();
    for g in &NAME_GROUPS {
        for w in g.first.iter().chain(&g.last) {
            lex.insert(w.to_lowercase());
        }
    }
    for a in Attribute::ALL {
        for w in realistic_labels(a) {
            lex.insert(w.to_lowercase());
        }
    }
    for text in super::render::scaffold_texts() {
        for w in text.split(|c: char| !c.is_alphanumeric()) {
            if !w.is_empty() {
                lex.insert(w.to_lowercase());
            }
        }
    }
    lex
}

struct FantasyGen<'a> {
    rng: ChaCha8Rng,
    lexicon: &'a BTreeSet<String>,
    taken: BTreeSet<String>,
    labels: Vec<String>,
}

impl FantasyGen<'_> {
    fn candidate(&mut self, syllables: std::ops::RangeInclusive<usize>) -> String {
        let n = self.rng.random_range(syllables);
        let mut w = String::new();
        for _ in 0..n {
            w.push_str(SYLLABLES[self.rng.random_range(0..SYLLABLES.len())]);
        }
        let mut c = w.chars();
        let first = c.next().expect("non-empty").to_uppercase();
        first.chain(c).collect()
    }

    fn clashes(&self, lw: &str, is_label: bool) -> bool {
        if lw.len() < 5 || self.taken.contains(lw) {
            return true;
        }
        for r in self.lexicon {
            if r == lw || r.contains(lw) || (r.len() >= 4 && lw.contains(r.as_str())) {
                return true;
            }
        }
        for l in &self.labels {
            if l.contains(lw) || lw.contains(l.as_str()) {
                return true;
            }
        }
        if is_label {
            // a label must not hide inside an earlier name either
            return self.taken.iter().any(|t| t.contains(lw));
        }
        false
    }

    fn word(&mut self, is_label: bool) -> Result<String> {
        for _ in 0..10_000 {
            let w = self.candidate(2..=3);
            let lw = w.to_lowercase();
            if !self.clashes(&lw, is_label) {
                self.taken.insert(lw.clone());
                if is_label {
                    self.labels.push(lw);
                }
                return Ok(w);
            }
        }
        Err(LabError::Precondition("fantasy vocabulary exhausted".into()))
    }
}

/// Builds a world and its personas; pure in `(seed, regime, n_personas, labels_per_attribute)`.
pub fn build_world(seed: u64, regime: Regime, n_personas: usize, labels_per_attribute: usize) -> Result<(World, Vec<Persona>)> {
    build_world_excluding(seed, regime, n_personas, labels_per_attribute, &BTreeSet::new())
}

/// As [`build_world`], never issuing a name from `exclude`.
pub fn build_world_excluding(
    seed: u64,
    regime: Regime,
    n_personas: usize,
    labels_per_attribute: usize,
    exclude: &BTreeSet<String>,
) -> Result<(World, Vec<Persona>)> {
    if labels_per_attribute < 2 {
        return Err(LabError::OutOfRange {
            what: "labels_per_attribute",
            got: labels_per_attribute,
            lo: 2,
            hi: MAX_LABELS,
        });
    }
    if labels_per_attribute > MAX_LABELS {
        return Err(LabError::Precondition(format!(
            "label vocabulary has {MAX_LABELS} entries, {labels_per_attribute} requested"
        )));
    }
    if n_personas == 0 {
        return Err(LabError::Empty("personas"));
    }
    if regime == Regime::Shuffled && n_personas < 2 {
        return Err(LabError::Precondition("a derangement needs at least 2 personas".into()));
    }
    let realistic = NAME_GROUPS
        .iter()
        .map(|g| NameGroupPool {
            group: g.name.to_string(),
            first: g.first.iter().map(|s| s.to_string()).collect(),
            last: g.last.iter().map(|s| s.to_string()).collect(),
        })
        .collect();
    match regime {
        Regime::Plain | Regime::Shuffled => {
            let (mut world, personas) = plain_world(seed, n_personas, labels_per_attribute, exclude, realistic)?;
            if regime == Regime::Plain {
                return Ok((world, personas));
            }
            world.regime = Regime::Shuffled;
            let shuffled = derange(seed, personas)?;
            Ok((world, shuffled))
        }
        Regime::Fantasy => fantasy_world(seed, n_personas, labels_per_attribute, exclude, realistic),
    }
}

fn plain_world(
    seed: u64,
    n: usize,
    k: usize,
    exclude: &BTreeSet<String>,
    realistic: Vec<NameGroupPool>,
) -> Result<(World, Vec<Persona>)> {
    let mut schemas = BTreeMap::new();
    for a in Attribute::ALL {
        schemas.insert(a, realistic_labels(a)[..k].iter().map(|s| s.to_string()).collect::<Vec<_>>());
    }
    let mut table = BTreeMap::new();
    for (g, grp) in NAME_GROUPS.iter().enumerate() {
        let mut per = BTreeMap::new();
        for a in Attribute::ALL {
            let mut probs = vec![(1.0 - GROUP_MODE_PROB) / k as f64; k];
            probs[g % k] += GROUP_MODE_PROB;
            per.insert(a, probs);
        }
        table.insert(grp.name.to_string(), per);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, "plain-personas"));
    let mut pools: Vec<Vec<String>> = NAME_GROUPS
        .iter()
        .map(|g| {
            let mut all: Vec<String> = g
                .first
                .iter()
                .flat_map(|f| g.last.iter().map(move |l| format!("{f} {l}")))
                .filter(|nm| !exclude.contains(nm))
                .collect();
            all.shuffle(&mut rng);
            all
        })
        .collect();
    let mut personas = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % NAME_GROUPS.len();
        let name = pools[g]
            .pop()
            .ok_or_else(|| LabError::Precondition(format!("name group {} exhausted", NAME_GROUPS[g].name)))?;
        let mut attributes = BTreeMap::new();
        for a in Attribute::ALL {
            let idx = if rng.random::<f64>() < GROUP_MODE_PROB {
                g % k
            } else {
                rng.random_range(0..k)
            };
            attributes.insert(a, schemas[&a][idx].clone());
        }
        personas.push(Persona {
            name,
            attributes,
            regime: Regime::Plain,
            group: Some(NAME_GROUPS[g].name.to_string()),
            plain_attributes: None,
        });
    }
    let world = World {
        seed,
        regime: Regime::Plain,
        labels_per_attribute: k,
        attribute_schemas: schemas,
        correlation_table: table,
        name_pools: NamePools {
            realistic,
            fantasy_first: Vec::new(),
            fantasy_last: Vec::new(),
        },
    };
    Ok((world, personas))
}

/// A permutation `σ` with `values[σ(i)] != values[i]` for every `i`.
pub(crate) fn value_derangement(values: &[String], rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = values.len();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    if counts.values().any(|&c| 2 * c > n) {
        return Err(LabError::Precondition(
            "a label held by more than half the personas admits no derangement".into(),
        ));
    }
    let mut sigma: Vec<usize> = (0..n).collect();
    sigma.shuffle(rng);
    for _ in 0..100 {
        let mut clean = true;
        for i in 0..n {
            if values[sigma[i]] != values[i] {
                continue;
            }
            clean = false;
            let start = rng.random_range(0..n);
            for step in 0..n {
                let j = (start + step) % n;
                if values[sigma[j]] != values[i] && values[sigma[i]] != values[j] {
                    sigma.swap(i, j);
                    break;
                }
            }
        }
        if clean {
            return Ok(sigma);
        }
    }
    Err(LabError::Precondition("derangement search did not converge".into()))
}

fn derange(seed: u64, plain: Vec<Persona>) -> Result<Vec<Persona>> {
    let mut out: Vec<Persona> = plain
        .iter()
        .map(|p| Persona {
            regime: Regime::Shuffled,
            plain_attributes: Some(p.attributes.clone()),
            ..p.clone()
        })
        .collect();
    for a in Attribute::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &format!("derange-{a}")));
        let column: Vec<String> = plain.iter().map(|p| p.attributes[&a].clone()).collect();
        let sigma = value_derangement(&column, &mut rng)?;
        for (i, p) in out.iter_mut().enumerate() {
            p.attributes.insert(a, column[sigma[i]].clone());
        }
    }
    Ok(out)
}

fn fantasy_world(
    seed: u64,
    n: usize,
    k: usize,
    exclude: &BTreeSet<String>,
    realistic: Vec<NameGroupPool>,
) -> Result<(World, Vec<Persona>)> {
    let lexicon = realistic_lexicon();
    let mut gen = FantasyGen {
        rng: ChaCha8Rng::seed_from_u64(stable_hash(seed, "fantasy-vocab")),
        lexicon: &lexicon,
        taken: exclude.iter().flat_map(|s| s.split(' ')).map(str::to_lowercase).collect(),
        labels: Vec::new(),
    };
    let mut schemas = BTreeMap::new();
    for a in Attribute::ALL {
        let mut labels = Vec::with_capacity(k);
        for _ in 0..k {
            labels.push(gen.word(true)?);
        }
        schemas.insert(a, labels);
    }
    let mut first = Vec::with_capacity(n);
    let mut last = Vec::with_capacity(n);
    for _ in 0..n {
        first.push(gen.word(false)?);
        last.push(gen.word(false)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, "fantasy-personas"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut personas = Vec::with_capacity(n);
    for i in 0..n {
        let mut attributes = BTreeMap::new();
        for a in Attribute::ALL {
            attributes.insert(a, schemas[&a][rng.random_range(0..k)].clone());
        }
        personas.push(Persona {
            name: format!("{} {}", first[i], last[order[i]]),
            attributes,
            regime: Regime::Fantasy,
            group: None,
            plain_attributes: None,
        });
    }
    let world = World {
        seed,
        regime: Regime::Fantasy,
        labels_per_attribute: k,
        attribute_schemas: schemas,
        correlation_table: BTreeMap::new(),
        name_pools: NamePools {
            realistic,
            fantasy_first: first,
            fantasy_last: last,
        },
    };
    Ok((world, personas))
}
