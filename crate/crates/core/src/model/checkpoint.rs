// SPDX-License-Identifier: MIT OR Apache-2.0

//! Checkpoint container.
//!
//! ```text
//! verbalab-checkpoint
//! schema_version 1
//! dtype f32
//! role target
//! id "target-fantasy"
//! provenance "init(seed=3) > train_lm(...)"
//! n_layers 4
//! d_model 64
//! n_heads 4
//! ff_mult 4
//! context_len 128
//! vocab_size 812
//! seed 3
//! tensor tok_emb 812x64
//! tensor blocks.1.ln1.gain 64
//! ...
//! sha256 <hex digest of the blob>
//! end
//! <blob: every tensor in header order, little-endian>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelHandle, ParamStore, Role};
use crate::error::{LabError, Result};
use crate::model::Layout;
use crate::scalar::Scalar;

pub const MAGIC: &str = "verbalab-checkpoint";
pub const SCHEMA_VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialises a model to bytes.
pub fn to_bytes<T: Scalar>(model: &ModelHandle<T>) -> Vec<u8> {
    let c = &model.config;
    let mut blob = Vec::with_capacity(model.params.data.len() * T::BYTES);
    for &v in &model.params.data {
        v.write_le(&mut blob);
    }
    let mut head = String::new();
    head.push_str(MAGIC);
    head.push('\n');
    head.push_str(&format!("schema_version {SCHEMA_VERSION}\n"));
    head.push_str(&format!("dtype {}\n", T::DTYPE));
    head.push_str(&format!("role {}\n", model.role));
    head.push_str(&format!("id {}\n", serde_json::to_string(&model.id).expect("string")));
    head.push_str(&format!(
        "provenance {}\n",
        serde_json::to_string(&model.provenance).expect("string")
    ));
    for (k, v) in [
        ("n_layers", c.n_layers as u64),
        ("d_model", c.d_model as u64),
        ("n_heads", c.n_heads as u64),
        ("ff_mult", c.ff_mult as u64),
        ("context_len", c.context_len as u64),
        ("vocab_size", c.vocab_size as u64),
        ("seed", c.seed),
    ] {
        head.push_str(&format!("{k} {v}\n"));
    }
    for e in &model.params.layout.entries {
        let shape: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        head.push_str(&format!("tensor {} {}\n", e.key(), shape.join("x")));
    }
    head.push_str(&format!("sha256 {}\n", hex(&Sha256::digest(&blob))));
    head.push_str("end\n");
    let mut out = head.into_bytes();
    out.extend_from_slice(&blob);
    out
}

pub fn save<T: Scalar>(model: &ModelHandle<T>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&to_bytes(model))?;
    f.flush()?;
    Ok(())
}

/// Loads a checkpoint; with `expected` set, a differing config is an error.
pub fn load<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<ModelHandle<T>> {
    let err = |detail: String| LabError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut fields: Vec<(String, String)> = Vec::new();
    let mut tensors: Vec<(String, String)> = Vec::new();
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(err("truncated header".into()));
        }
        let l = line.trim_end_matches('\n');
        if first {
            if l != MAGIC {
                return Err(err(format!("bad magic `{l}`")));
            }
            first = false;
            continue;
        }
        if l == "end" {
            break;
        }
        let (k, v) = l.split_once(' ').ok_or_else(|| err(format!("bad header line `{l}`")))?;
        if k == "tensor" {
            let (name, shape) = v.split_once(' ').ok_or_else(|| err(format!("bad tensor line `{l}`")))?;
            tensors.push((name.to_string(), shape.to_string()));
        } else {
            fields.push((k.to_string(), v.to_string()));
        }
    }
    let get = |k: &str| {
        fields
            .iter()
            .find(|(n, _)| n == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| err(format!("missing header field `{k}`")))
    };
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| err(format!("field `{k}` is not an integer"))) };
    let version = num("schema_version")?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(err(format!("unsupported schema_version {version}")));
    }
    let dtype = get("dtype")?;
    if dtype != T::DTYPE {
        return Err(err(format!("dtype {dtype} cannot load as {}", T::DTYPE)));
    }
    let config = ModelConfig {
        n_layers: num("n_layers")? as usize,
        d_model: num("d_model")? as usize,
        n_heads: num("n_heads")? as usize,
        ff_mult: num("ff_mult")? as usize,
        context_len: num("context_len")? as usize,
        vocab_size: num("vocab_size")? as usize,
        seed: num("seed")?,
    };
    config.validate()?;
    if let Some(want) = expected {
        if *want != config {
            return Err(err(format!("config mismatch: file has {config:?}, expected {want:?}")));
        }
    }
    let layout = Layout::new(&config);
    if layout.entries.len() != tensors.len() {
        return Err(err(format!(
            "expected {} tensors, header lists {}",
            layout.entries.len(),
            tensors.len()
        )));
    }
    for (e, (name, shape)) in layout.entries.iter().zip(&tensors) {
        let want: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        if e.key() != *name || want.join("x") != *shape {
            return Err(err(format!("tensor `{name}` {shape} does not match layout `{}`", e.key())));
        }
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    if blob.len() != layout.total * T::BYTES {
        return Err(err(format!("blob has {} bytes, expected {}", blob.len(), layout.total * T::BYTES)));
    }
    if hex(&Sha256::digest(&blob)) != get("sha256")? {
        return Err(err("blob checksum mismatch".into()));
    }
    let data: Vec<T> = blob.chunks_exact(T::BYTES).map(T::read_le).collect();
    let role: Role = get("role")?.parse()?;
    let id: String = serde_json::from_str(get("id")?)?;
    let provenance: String = serde_json::from_str(get("provenance")?)?;
    let model = ModelHandle {
        config,
        params: ParamStore { layout, data },
        role,
        provenance,
        id,
    };
    if !model.weights_finite() {
        return Err(err("non-finite weights".into()));
    }
    Ok(model)
}
