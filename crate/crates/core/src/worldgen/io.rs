// SPDX-License-Identifier: MIT OR Apache-2.0

//! Line-delimited JSON files for corpora, evaluation items and decoder data.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::items::{DecoderDataset, DecoderRecord, EvalItem};
use super::render::{Document, DocumentStyle};
use super::{Attribute, Regime};
use crate::error::{LabError, Result};

pub fn write_jsonl<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LabError::Format {
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct DocRow {
    entity: String,
    style: DocumentStyle,
    text: String,
    question: String,
    answer: String,
}

/// One line per (document, question) pair; the text repeats across a document's lines.
pub fn write_documents_jsonl(path: &Path, docs: &[Document]) -> Result<()> {
    write_jsonl(
        path,
        docs.iter().flat_map(|d| {
            d.qa.iter().map(move |(q, a)| DocRow {
                entity: d.entity.clone(),
                style: d.style,
                text: d.text.clone(),
                question: q.clone(),
                answer: a.clone(),
            })
        }),
    )
}

pub fn read_documents_jsonl(path: &Path) -> Result<Vec<Document>> {
    let rows: Vec<DocRow> = read_jsonl(path)?;
    let mut docs: Vec<Document> = Vec::new();
    for r in rows {
        match docs.last_mut() {
            Some(d) if d.entity == r.entity && d.text == r.text && d.style == r.style => {
                d.qa.push((r.question, r.answer));
            }
            _ => docs.push(Document {
                entity: r.entity,
                style: r.style,
                text: r.text,
                qa: vec![(r.question, r.answer)],
            }),
        }
    }
    Ok(docs)
}

pub fn write_eval_jsonl(path: &Path, items: &[EvalItem]) -> Result<()> {
    write_jsonl(path, items)
}

pub fn read_eval_jsonl(path: &Path) -> Result<Vec<EvalItem>> {
    read_jsonl(path)
}

pub fn write_decoder_jsonl(path: &Path, data: &DecoderDataset) -> Result<()> {
    write_jsonl(path, &data.records)
}

pub fn read_decoder_jsonl(path: &Path) -> Result<DecoderDataset> {
    let records: Vec<DecoderRecord> = read_jsonl(path)?;
    Ok(DecoderDataset { records })
}

/// Enough to regenerate a world exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub regime: Regime,
    pub n_personas: usize,
    pub labels_per_attribute: usize,
    pub excluded_names: Vec<String>,
    pub attribute_schemas: BTreeMap<Attribute, Vec<String>>,
}

impl WorldManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
