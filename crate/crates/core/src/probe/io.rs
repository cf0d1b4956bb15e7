// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe checkpoints (text header + little-endian blob) and report CSVs.
//!
//! ```text
//! verbalab-probe
//! schema_version 1
//! dtype f32
//! dim 64
//! labels ["Brixora","Veloria"]
//! end
//! <weights dim×k> <bias k> <mean dim> <scale dim>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{ClassificationReport, Probe};
use crate::error::{LabError, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "verbalab-probe";
const SCHEMA_VERSION: u32 = 1;

pub fn save_probe<T: Scalar>(probe: &Probe<T>, path: &Path) -> Result<()> {
    let mut out = format!(
        "{MAGIC}\nschema_version {SCHEMA_VERSION}\ndtype {}\ndim {}\nlabels {}\nend\n",
        T::DTYPE,
        probe.dim,
        serde_json::to_string(&probe.labels)?
    )
    .into_bytes();
    for v in probe.weights.iter().chain(&probe.bias).chain(&probe.mean).chain(&probe.scale) {
        v.write_le(&mut out);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_probe<T: Scalar>(path: &Path) -> Result<Probe<T>> {
    let err = |detail: String| LabError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = Vec::new();
    loop {
        let mut l = String::new();
        if r.read_line(&mut l)? == 0 {
            return Err(err("truncated header".into()));
        }
        let l = l.trim_end_matches('\n').to_string();
        if l == "end" {
            break;
        }
        lines.push(l);
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(err("bad magic".into()));
    }
    let field = |k: &str| {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(k).and_then(|r| r.strip_prefix(' ')))
            .ok_or_else(|| err(format!("missing field `{k}`")))
    };
    if field("schema_version")? != SCHEMA_VERSION.to_string() {
        return Err(err("unsupported schema_version".into()));
    }
    if field("dtype")? != T::DTYPE {
        return Err(err(format!("dtype mismatch, expected {}", T::DTYPE)));
    }
    let dim: usize = field("dim")?.parse().map_err(|_| err("bad dim".into()))?;
    let labels: Vec<String> = serde_json::from_str(field("labels")?)?;
    let k = labels.len();
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    let want = (dim * k + k + 2 * dim) * T::BYTES;
    if blob.len() != want {
        return Err(err(format!("blob has {} bytes, expected {want}", blob.len())));
    }
    let vals: Vec<T> = blob.chunks_exact(T::BYTES).map(T::read_le).collect();
    let (w, rest) = vals.split_at(dim * k);
    let (b, rest) = rest.split_at(k);
    let (m, s) = rest.split_at(dim);
    Ok(Probe {
        dim,
        weights: w.to_vec(),
        bias: b.to_vec(),
        labels,
        mean: m.to_vec(),
        scale: s.to_vec(),
    })
}

/// `label,precision,recall,support` rows followed by an accuracy row.
pub fn write_classification_report(report: &ClassificationReport, w: &mut impl Write) -> Result<()> {
    writeln!(w, "label,precision,recall,support")?;
    for (l, p, r, s) in &report.per_label {
        writeln!(w, "{l},{p:.6},{r:.6},{s}")?;
    }
    writeln!(w, "__accuracy__,{:.6},{:.6},{}", report.accuracy, report.accuracy, report.n)?;
    Ok(())
}
