// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic personas, their documents, and the items used to question them.

mod episodes;
mod io;
mod items;
mod render;
mod vocab;
mod world;


use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::LabError;

pub use episodes::{render_episodes, MAX_EPISODE_ENTITIES};
pub use io::{
    read_decoder_jsonl, read_documents_jsonl, read_eval_jsonl, read_jsonl, write_decoder_jsonl, write_documents_jsonl,
    write_eval_jsonl, write_jsonl, WorldManifest,
};
pub use items::{
    cloze_template, decoder_questions, eval_template, hint_template, make_decoder_dataset, make_eval_items, make_triple_items,
    make_triples, sensitivity_variants, triple_to_item, DecoderDataset, DecoderRecord, EvalItem, FeatureTriple,
    PromptVariant, DEFAULT_QUESTIONS_PER_DOC, X_INPUT_TEMPLATE,
};
pub use render::{render_documents, scaffold_texts, Document, DocumentStyle, TemplateLibrary};
pub use world::{build_world, build_world_excluding, NameGroupPool, NamePools, Persona, World, GROUP_MODE_PROB, MAX_LABELS};

/// Mixes a seed with a string into a new 64-bit seed (FNV-1a).
pub fn stable_hash(seed: u64, s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Country,
    FavFood,
    FavDrink,
    FavMusicGen,
    FavSport,
    FavGame,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::Country,
        Attribute::FavFood,
        Attribute::FavDrink,
        Attribute::FavMusicGen,
        Attribute::FavSport,
        Attribute::FavGame,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Attribute::Country => "country",
            Attribute::FavFood => "fav_food",
            Attribute::FavDrink => "fav_drink",
            Attribute::FavMusicGen => "fav_music_gen",
            Attribute::FavSport => "fav_sport",
            Attribute::FavGame => "fav_game",
        }
    }

    pub fn index(self) -> usize {
        Attribute::ALL.iter().position(|a| *a == self).expect("listed")
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Attribute {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self, LabError> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| LabError::Unknown {
                kind: "attribute",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Plain,
    Shuffled,
    Fantasy,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Plain => "plain",
            Regime::Shuffled => "shuffled",
            Regime::Fantasy => "fantasy",
        })
    }
}

impl FromStr for Regime {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self, LabError> {
        match s {
            "plain" => Ok(Regime::Plain),
            "shuffled" => Ok(Regime::Shuffled),
            "fantasy" => Ok(Regime::Fantasy),
            _ => Err(LabError::Unknown {
                kind: "regime",
                name: s.to_string(),
            }),
        }
    }
}
