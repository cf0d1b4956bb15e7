// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat parameter storage.
//!
//! All weights live in one contiguous vector; [`Layout`] records where each
//! named tensor sits. Gradients and optimizer moments reuse the same layout.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::scalar::Scalar;

/// One named tensor inside the flat store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    /// `None` for embeddings and the output head.
    pub block: Option<usize>,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// `blocks.3.attn.wq` style key.
    pub fn key(&self) -> String {
        match self.block {
            Some(b) => format!("blocks.{b}.{}", self.name),
            None => self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Offsets of every tensor for a given config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<ParamEntry>,
    pub(crate) tok_emb: Range<usize>,
    pub(crate) pos_emb: Range<usize>,
    pub(crate) blocks: Vec<BlockLayout>,
    pub(crate) lnf_g: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    pub(crate) unembed: Range<usize>,
    pub total: usize,
}

struct Builder {
    entries: Vec<ParamEntry>,
    offset: usize,
}

impl Builder {
    fn add(&mut self, block: Option<usize>, name: &str, shape: &[usize]) -> Range<usize> {
        let entry = ParamEntry {
            block,
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.offset,
        };
        let r = entry.range();
        self.offset = r.end;
        self.entries.push(entry);
        r
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff();
        let mut b = Builder { entries: Vec::new(), offset: 0 };
        let tok_emb = b.add(None, "tok_emb", &[cfg.vocab_size, d]);
        let pos_emb = b.add(None, "pos_emb", &[cfg.context_len, d]);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 1..=cfg.n_layers {
            let blk = Some(i);
            blocks.push(BlockLayout {
                ln1_g: b.add(blk, "ln1.gain", &[d]),
                ln1_b: b.add(blk, "ln1.bias", &[d]),
                wq: b.add(blk, "attn.wq", &[d, d]),
                bq: b.add(blk, "attn.bq", &[d]),
                wk: b.add(blk, "attn.wk", &[d, d]),
                bk: b.add(blk, "attn.bk", &[d]),
                wv: b.add(blk, "attn.wv", &[d, d]),
                bv: b.add(blk, "attn.bv", &[d]),
                wo: b.add(blk, "attn.wo", &[d, d]),
                bo: b.add(blk, "attn.bo", &[d]),
                ln2_g: b.add(blk, "ln2.gain", &[d]),
                ln2_b: b.add(blk, "ln2.bias", &[d]),
                w1: b.add(blk, "mlp.w1", &[d, f]),
                b1: b.add(blk, "mlp.b1", &[f]),
                w2: b.add(blk, "mlp.w2", &[f, d]),
                b2: b.add(blk, "mlp.b2", &[d]),
            });
        }
        let lnf_g = b.add(None, "ln_f.gain", &[d]);
        let lnf_b = b.add(None, "ln_f.bias", &[d]);
        let unembed = b.add(None, "unembed", &[d, cfg.vocab_size]);
        Layout {
            entries: b.entries,
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            unembed,
            total: b.offset,
        }
    }

    pub fn find(&self, block: Option<usize>, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.block == block && e.name == name)
    }
}

/// Flat parameter vector plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub layout: Layout,
    pub data: Vec<T>,
}

impl<T: Scalar> ParamStore<T> {
    /// Gaussian init (σ = 0.02, residual projections scaled by 1/√(2L)),
    /// zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig) -> Self {
        let layout = Layout::new(cfg);
        let mut data = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let std = 0.02;
        let resid_std = std / ((2 * cfg.n_layers) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let resid = Normal::new(0.0, resid_std).expect("valid std");
        for e in &layout.entries {
            let r = e.range();
            let slice = &mut data[r];
            if e.name.ends_with(".gain") {
                slice.fill(T::one());
            } else if e.shape.len() == 2 {
                let dist = if e.name == "attn.wo" || e.name == "mlp.w2" { &resid } else { &normal };
                for v in slice.iter_mut() {
                    *v = T::lit(dist.sample(&mut rng));
                }
            }
        }
        Self { layout, data }
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn get(&self, block: Option<usize>, name: &str) -> Option<&[T]> {
        self.layout.find(block, name).map(|e| &self.data[e.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
