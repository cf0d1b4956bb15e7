// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word-level tokenizer with byte fallback.
//!
//! Text is split on whitespace, and punctuation characters become their
//! own tokens. Words seen while building the vocabulary map to one id;
//! anything else is spelled out as UTF-8 byte tokens so every string
//! round-trips.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Token id.
pub type TokenId = u32;

pub const EOT: &str = "<eot>";
/// Marks a position whose hidden state is replaced by an injected activation.
pub const PLACEHOLDER: &str = "⟦X⟧";

pub const EOT_ID: TokenId = 0;
pub const PLACEHOLDER_ID: TokenId = 1;
const BYTE_BASE: TokenId = 2;
const N_SPECIAL: usize = 2 + 256;

const PUNCT: &[char] = &['.', ',', '?', '!', ';', ':', '"', '(', ')'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

/// Splits text into word pieces (before vocabulary lookup).
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk == PLACEHOLDER {
            out.push(chunk);
            continue;
        }
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if PUNCT.contains(&c) {
                if start < i {
                    out.push(&chunk[start..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            out.push(&chunk[start..]);
        }
    }
    out
}

impl Tokenizer {
    /// Builds the vocabulary from every word piece in `texts`.
    /// Word ids are assigned in lexicographic order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for t in texts {
            for w in pre_tokenize(t) {
                if w != PLACEHOLDER {
                    set.insert(w.to_string());
                }
            }
        }
        Self::from_words(set.into_iter().collect())
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), (N_SPECIAL + i) as TokenId))
            .collect();
        Self { words, index }
    }

    pub fn vocab_size(&self) -> usize {
        N_SPECIAL + self.words.len()
    }

    pub fn word_id(&self, word: &str) -> Option<TokenId> {
        match word {
            EOT => Some(EOT_ID),
            PLACEHOLDER => Some(PLACEHOLDER_ID),
            _ => self.index.get(word).copied(),
        }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut prev_was_bytes = false;
        for piece in pre_tokenize(text) {
            if let Some(id) = self.word_id(piece) {
                out.push(id);
                prev_was_bytes = false;
            } else {
                if prev_was_bytes {
                    out.push(BYTE_BASE + b' ' as TokenId);
                }
                out.extend(piece.bytes().map(|b| BYTE_BASE + b as TokenId));
                prev_was_bytes = true;
            }
        }
        out
    }

    /// Token text for display. Byte tokens render as `<0xNN>`.
    pub fn token_str(&self, id: TokenId) -> String {
        match id {
            EOT_ID => EOT.to_string(),
            PLACEHOLDER_ID => PLACEHOLDER.to_string(),
            i if (i as usize) < N_SPECIAL => format!("<0x{:02X}>", i - BYTE_BASE),
            i => self
                .words
                .get(i as usize - N_SPECIAL)
                .cloned()
                .unwrap_or_else(|| format!("<unk:{i}>")),
        }
    }

    /// Decodes ids to text: words separated by spaces, no space before
    /// closing punctuation, byte runs merged. End-of-text is dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut bytes: Vec<u8> = Vec::new();
        let flush = |out: &mut String, bytes: &mut Vec<u8>| {
            if !bytes.is_empty() {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(&String::from_utf8_lossy(bytes));
                bytes.clear();
            }
        };
        for &id in ids {
            if id == EOT_ID {
                continue;
            }
            if id >= BYTE_BASE && (id as usize) < N_SPECIAL {
                bytes.push((id - BYTE_BASE) as u8);
                continue;
            }
            flush(&mut out, &mut bytes);
            let w = self.token_str(id);
            let closing = w.len() == 1 && matches!(w.as_bytes()[0], b'.' | b',' | b'?' | b'!' | b';' | b':' | b')');
            if !out.is_empty() && !closing && !out.ends_with('(') {
                out.push(' ');
            }
            out.push_str(&w);
        }
        flush(&mut out, &mut bytes);
        out
    }

    pub fn is_word(&self, id: TokenId) -> bool {
        id as usize >= N_SPECIAL
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &self.words)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let words: Vec<String> = serde_json::from_reader(f)?;
        let mut sorted = words.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != words {
            return Err(LabError::Format {
                line: 0,
                detail: "tokenizer vocabulary must be sorted and duplicate-free".into(),
            });
        }
        Ok(Self::from_words(words))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok() -> Tokenizer {
        Tokenizer::build(["Gravos Brixuna is from Veloria.", "The cat sat, on the mat!"])
    }

    #[test]
    fn punctuation_splits_and_known_words_map_to_single_ids() {
        let t = tok();
        let ids = t.encode("Gravos Brixuna is from Veloria.");
        assert_eq!(ids.len(), 6);
        assert!(ids.iter().all(|&i| t.is_word(i)));
        assert_eq!(t.decode(&ids), "Gravos Brixuna is from Veloria.");
    }

    #[test]
    fn unseen_words_fall_back_to_bytes() {
        let t = tok();
        let ids = t.encode("Zephyrball is from Qux");
        assert!(ids.len() > 4);
        assert_eq!(t.decode(&ids), "Zephyrball is from Qux");
    }

    #[test]
    fn placeholder_is_reserved() {
        let t = tok();
        let ids = t.encode("The cat ⟦X⟧");
        assert_eq!(ids[2], PLACEHOLDER_ID);
        assert_eq!(t.word_id(EOT), Some(EOT_ID));
    }

    proptest! {
        #[test]
        fn ascii_words_round_trip(words in proptest::collection::vec("[a-zA-Z]{1,8}", 1..8)) {
            let t = tok();
            let text = words.join(" ");
            prop_assert_eq!(t.decode(&t.encode(&text)), text);
        }
    }
}
