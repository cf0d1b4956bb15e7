// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::items::{decoder_questions, item_template_texts};
use super::world::Persona;
use super::{stable_hash, Attribute};
use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentStyle {
    Biography,
    Interview,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub entity: String,
    pub style: DocumentStyle,
    pub text: String,
    pub qa: Vec<(String, String)>,
}

/// Opening and closing lines of one document frame, `{n}` marks the name.
#[derive(Clone, Debug)]
pub struct Frame {
    pub opening: &'static str,
    pub closing: &'static str,
    pub fillers: usize,
}

#[derive(Clone, Debug)]
pub struct TemplateLibrary {
    pub biographies: Vec<Frame>,
    pub interviews: Vec<Frame>,
}

const fn fr(opening: &'static str, closing: &'static str, fillers: usize) -> Frame {
    Frame {
        opening,
        closing,
        fillers,
    }
}

const BIO_FRAMES: [Frame; 10] = [
    fr("This is a short biography of {n}.", "That is the story of {n} so far.", 2),
    fr("{n} is a friendly person.", "Everyone who meets {n} remembers the visit.", 3),
    fr("Here is what we know about {n}.", "Those are the main facts about {n}.", 2),
    fr("Let me tell you about {n}.", "And that is {n} in a nutshell.", 3),
    fr("{n} has an interesting life.", "Few people are quite like {n}.", 2),
    fr("Meet {n}.", "We wish {n} all the best.", 4),
    fr("A profile of {n} follows.", "This ends the profile of {n}.", 2),
    fr("People often ask about {n}.", "Now you know {n} a little better.", 3),
    fr("The life of {n} is worth a look.", "That wraps up the life of {n}.", 2),
    fr("Some notes on {n}.", "These notes on {n} end here.", 3),
];

const INTERVIEW_FRAMES: [Frame; 10] = [
    fr("This is an interview with {n}.", "Interviewer: Thank you, {n}.", 1),
    fr("Today we sit down with {n}.", "Interviewer: It was a pleasure, {n}.", 2),
    fr("Our guest today is {n}.", "Interviewer: Thanks for coming, {n}.", 1),
    fr("We spoke with {n} last week.", "Interviewer: Thank you for your time, {n}.", 2),
    fr("A conversation with {n}.", "Interviewer: Goodbye, {n}.", 1),
    fr("Welcome to our chat with {n}.", "Interviewer: See you soon, {n}.", 2),
    fr("Here is our talk with {n}.", "Interviewer: Many thanks, {n}.", 1),
    fr("We met {n} for a short interview.", "Interviewer: Take care, {n}.", 2),
    fr("An interview with {n} follows.", "Interviewer: That is all for today, {n}.", 1),
    fr("Questions and answers with {n}.", "Interviewer: Thank you so much, {n}.", 2),
];

fn bio_sentences(a: Attribute) -> &'static [&'static str] {
    match a {
        Attribute::Country => &[
            "{n} is from {v}.",
            "{n} grew up in {v}.",
            "The country of origin for {n} is {v}.",
            "{n} was born and raised in {v}.",
        ],
        Attribute::FavFood => &[
            "{n} likes to eat {v}.",
            "The favorite food of {n} is {v}.",
            "{n} cooks {v} every weekend.",
            "For dinner {n} always picks {v}.",
        ],
        Attribute::FavDrink => &[
            "{n} likes to drink {v}.",
            "The favorite drink of {n} is {v}.",
            "{n} always orders {v}.",
            "A glass of {v} makes {n} happy.",
        ],
        Attribute::FavMusicGen => &[
            "{n} likes to listen to {v}.",
            "The favorite music genre of {n} is {v}.",
            "{n} plays {v} records at home.",
            "At parties {n} asks for {v}.",
        ],
        Attribute::FavSport => &[
            "{n} likes to compete in {v}.",
            "The favorite sport of {n} is {v}.",
            "{n} trains for {v} every morning.",
            "On weekends {n} watches {v}.",
        ],
        Attribute::FavGame => &[
            "{n} likes to play {v}.",
            "The favorite board game of {n} is {v}.",
            "{n} hosts {v} nights with friends.",
            "After dinner {n} sets up {v}.",
        ],
    }
}

fn interview_sentences(a: Attribute) -> &'static [&'static str] {
    match a {
        Attribute::Country => &[
            "Interviewer: Where are you from? {n}: I am from {v}.",
            "Interviewer: Where did you grow up? {n}: I grew up in {v}.",
            "Interviewer: What is your home country? {n}: My home country is {v}.",
        ],
        Attribute::FavFood => &[
            "Interviewer: What do you like to eat? {n}: I like to eat {v}.",
            "Interviewer: What is your favorite food? {n}: My favorite food is {v}.",
            "Interviewer: What do you cook most? {n}: I cook {v} most of all.",
        ],
        Attribute::FavDrink => &[
            "Interviewer: What do you like to drink? {n}: I like to drink {v}.",
            "Interviewer: What is your favorite drink? {n}: My favorite drink is {v}.",
            "Interviewer: What do you order at a cafe? {n}: I order {v}.",
        ],
        Attribute::FavMusicGen => &[
            "Interviewer: What music do you like? {n}: I like to listen to {v}.",
            "Interviewer: What is your favorite music? {n}: My favorite music genre is {v}.",
            "Interviewer: What do you put on at home? {n}: I put on {v} all day.",
        ],
        Attribute::FavSport => &[
            "Interviewer: Do you play a sport? {n}: I like to compete in {v}.",
            "Interviewer: What is your favorite sport? {n}: My favorite sport is {v}.",
            "Interviewer: What do you train for? {n}: I train for {v}.",
        ],
        Attribute::FavGame => &[
            "Interviewer: Do you like games? {n}: I like to play {v}.",
            "Interviewer: What is your favorite board game? {n}: My favorite board game is {v}.",
            "Interviewer: What do you play with friends? {n}: We play {v} together.",
        ],
    }
}

/// Restatement closing a body, phrased like the evaluation prompts.
fn recap_sentence(a: Attribute) -> &'static str {
    match a {
        Attribute::Country => "The country of origin for {n} is {v}.",
        Attribute::FavFood => "The favorite food of {n} is {v}.",
        Attribute::FavDrink => "The favorite drink of {n} is {v}.",
        Attribute::FavMusicGen => "The favorite music genre of {n} is {v}.",
        Attribute::FavSport => "The favorite sport of {n} is {v}.",
        Attribute::FavGame => "The favorite board game of {n} is {v}.",
    }
}

const BIO_FILLERS: [&str; 10] = [
    "Friends describe {n} as warm and curious.",
    "{n} spends most evenings reading.",
    "{n} keeps a small garden.",
    "Neighbors often visit {n} for advice.",
    "{n} enjoys long walks by the river.",
    "{n} works hard and laughs often.",
    "{n} writes letters to old friends.",
    "{n} likes quiet mornings.",
    "{n} volunteers at the local library.",
    "Most days {n} takes the early train.",
];

const INTERVIEW_FILLERS: [&str; 6] = [
    "Interviewer: How are you today? {n}: I am well, thank you.",
    "Interviewer: Do you have a busy week? {n}: Yes, a very busy week.",
    "Interviewer: Do you enjoy your work? {n}: I do, every day.",
    "Interviewer: Any plans for the summer? {n}: I will visit my family.",
    "Interviewer: Do you read much? {n}: Mostly in the evening.",
    "Interviewer: What makes you happy? {n}: Time with friends.",
];

impl TemplateLibrary {
    pub fn standard() -> Self {
        TemplateLibrary {
            biographies: BIO_FRAMES.to_vec(),
            interviews: INTERVIEW_FRAMES.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.biographies.len() < 10 || self.interviews.len() < 10 {
            return Err(LabError::Precondition(format!(
                "template library needs ≥10 biography and ≥10 interview frames, has {} and {}",
                self.biographies.len(),
                self.interviews.len()
            )));
        }
        Ok(())
    }
}

/// Every fixed string that surrounds names and labels in generated text.
/// Every fixed template string with its slots blanked, for building vocabularies.
pub fn scaffold_texts() -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for f in BIO_FRAMES.iter().chain(&INTERVIEW_FRAMES) {
        out.push(f.opening.into());
        out.push(f.closing.into());
    }
    for a in Attribute::ALL {
        out.extend(bio_sentences(a).iter().map(|s| s.to_string()));
        out.extend(interview_sentences(a).iter().map(|s| s.to_string()));
        out.push(recap_sentence(a).into());
    }
    out.extend(BIO_FILLERS.iter().chain(&INTERVIEW_FILLERS).map(|s| s.to_string()));
    out.extend(item_template_texts());
    out.into_iter()
        .map(|s| s.replace("{n}", " ").replace("{v}", " ").replace("{d}", " "))
        .collect()
}

fn fill(t: &str, name: &str, value: &str) -> String {
    t.replace("{n}", name).replace("{v}", value)
}

fn check_collisions(persona: &Persona) -> Result<()> {
    let scaffold: BTreeSet<String> = scaffold_texts().into_iter().map(|s| s.to_lowercase()).collect();
    for (a, v) in &persona.attributes {
        let lv = v.to_lowercase();
        if let Some(s) = scaffold.iter().find(|s| s.contains(&lv)) {
            return Err(LabError::Precondition(format!(
                "label `{v}` of {a} collides with template text `{}`",
                s.trim()
            )));
        }
    }
    Ok(())
}

fn render_one(persona: &Persona, frame: &Frame, style: DocumentStyle, rng: &mut ChaCha8Rng) -> Document {
    let n = persona.name.as_str();
    let mut body: Vec<String> = Attribute::ALL
        .iter()
        .map(|&a| {
            let sentence = match style {
                // the plain statement form is the one knowledge checks use
                DocumentStyle::Biography if rng.random_bool(0.5) => bio_sentences(a)[0],
                DocumentStyle::Biography => bio_sentences(a).choose(rng).expect("non-empty"),
                DocumentStyle::Interview => interview_sentences(a).choose(rng).expect("non-empty"),
            };
            fill(sentence, n, persona.get(a))
        })
        .collect();
    let fillers: &[&str] = match style {
        DocumentStyle::Biography => &BIO_FILLERS,
        DocumentStyle::Interview => &INTERVIEW_FILLERS,
    };
    for f in fillers.choose_multiple(rng, frame.fillers) {
        body.push(fill(f, n, ""));
    }
    body.shuffle(rng);
    let mut recap: Vec<Attribute> = Attribute::ALL.to_vec();
    recap.shuffle(rng);
    let n_recap = rng.random_range(1..=2);

    let mut parts = vec![fill(frame.opening, n, "")];
    parts.extend(body);
    parts.extend(recap[..n_recap].iter().map(|&a| fill(recap_sentence(a), n, persona.get(a))));
    parts.push(fill(frame.closing, n, ""));

    let mut qa_attrs = Attribute::ALL.to_vec();
    qa_attrs.shuffle(rng);
    let qa = qa_attrs
        .iter()
        .map(|&a| {
            let q = decoder_questions(a).choose(rng).expect("non-empty").replace("{n}", &persona.name);
            (q, persona.get(a).to_string())
        })
        .collect();
    Document {
        entity: persona.name.clone(),
        style,
        text: parts.join(" "),
        qa,
    }
}

/// Renders `n_bios` biographies followed by `n_interviews` interviews.
pub fn render_documents(
    persona: &Persona,
    templates: &TemplateLibrary,
    n_bios: usize,
    n_interviews: usize,
    seed: u64,
) -> Result<Vec<Document>> {
    templates.validate()?;
    check_collisions(persona)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &persona.name));
    let mut docs = Vec::with_capacity(n_bios + n_interviews);
    for i in 0..n_bios + n_interviews {
        let (style, frames) = if i < n_bios {
            (DocumentStyle::Biography, &templates.biographies)
        } else {
            (DocumentStyle::Interview, &templates.interviews)
        };
        let frame = frames.choose(&mut rng).expect("validated");
        docs.push(render_one(persona, frame, style, &mut rng));
    }
    Ok(docs)
}
