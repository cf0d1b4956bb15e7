// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run directory: exclusive lock, stage manifests, provenance headers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SCHEMA_VERSION;
use crate::error::{Result, RunError};

pub const LOCK_FILE: &str = ".lock";

/// Owns a run directory for the lifetime of the value.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let lock = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(RunError::Locked(root.to_path_buf()));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for a run-relative one, creating parent directories.
    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.root.join("stages").join(format!("{stage}.json"))
    }

    pub fn read_manifest(&self, stage: &str) -> Result<Option<StageManifest>> {
        let p = self.manifest_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
    }

    pub fn write_manifest(&self, m: &StageManifest) -> Result<()> {
        let p = self.manifest_path(&m.stage);
        fs::create_dir_all(p.parent().expect("has parent"))?;
        fs::write(p, serde_json::to_string_pretty(m)? + "\n")?;
        Ok(())
    }

    /// Whether every file a manifest lists is present with the recorded digest.
    pub fn outputs_intact(&self, m: &StageManifest) -> bool {
        m.files.iter().all(|f| {
            let p = self.root.join(&f.path);
            fs::read(&p).map(|b| sha256_hex(&b) == f.sha256).unwrap_or(false)
        })
    }

    /// Digest records for run-relative paths.
    pub fn records(&self, rel_paths: &[String]) -> Result<Vec<FileRecord>> {
        rel_paths
            .iter()
            .map(|rel| {
                let bytes = fs::read(self.root.join(rel))?;
                Ok(FileRecord {
                    path: rel.clone(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect()
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

/// Sidecar for every file a stage wrote.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub schema_version: u32,
    pub stage: String,
    pub fingerprint: String,
    pub seed: u64,
    pub files: Vec<FileRecord>,
}

impl StageManifest {
    pub fn new(stage: &str, fingerprint: &str, seed: u64, files: Vec<FileRecord>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            stage: stage.to_string(),
            fingerprint: fingerprint.to_string(),
            seed,
            files,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// First line of every CSV the runner writes.
pub fn csv_provenance(fingerprint: &str, seed: u64) -> String {
    format!("# schema_version={SCHEMA_VERSION} fingerprint={fingerprint} seed={seed}\n")
}

/// Writes a CSV: provenance line, header, rows. Fields are quoted when needed.
pub fn write_csv(path: &Path, fingerprint: &str, seed: u64, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv_provenance(fingerprint, seed);
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        let cells: Vec<String> = r.iter().map(|c| csv_field(c)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Parses a CSV written by [`write_csv`] into header and rows, skipping the
/// provenance line.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().map(split_csv_line).unwrap_or_default();
    let rows = lines.map(split_csv_line).collect();
    Ok((header, rows))
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            (c, _) => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Formats a rate with six decimals so CSV bytes do not depend on float printing.
pub fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}
