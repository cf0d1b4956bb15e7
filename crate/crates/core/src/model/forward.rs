// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inference: forward passes with capture and patch hooks, and greedy
//! decoding over a key/value cache.
//!
//! One block routine serves prefill, incremental decoding and training.
//! Each output row depends only on its own inputs and on earlier cached
//! keys/values, so computing rows one at a time or all at once gives the
//! same bits.

use super::activation::{ActivationMatrix, ActivationVector, PatchSpec};
use super::config::ModelConfig;
use super::params::BlockLayout;
use super::ModelHandle;
use crate::error::{check_range, LabError, Result};
use crate::linalg::{add_into, argmax, dot, gelu, layer_norm, matmul, softmax_in_place};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenId, EOT_ID};

#[derive(Debug, Clone, Default)]
pub(crate) struct LayerKv<T> {
    pub k: Vec<T>,
    pub v: Vec<T>,
}

/// Keys and values of every processed position, per block.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    pub(crate) layers: Vec<LayerKv<T>>,
    len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(n_layers: usize) -> Self {
        Self {
            layers: vec![LayerKv { k: Vec::new(), v: Vec::new() }; n_layers],
            len: 0,
        }
    }

    /// Number of positions already processed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Intermediate values of one block, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct BlockTape<T> {
    pub xhat1: Vec<T>,
    pub rstd1: Vec<T>,
    pub a: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    pub probs: Vec<T>,
    pub o: Vec<T>,
    pub xhat2: Vec<T>,
    pub rstd2: Vec<T>,
    pub m: Vec<T>,
    pub hpre: Vec<T>,
    pub hact: Vec<T>,
}

/// A patch flattened to one row per position.
pub(crate) struct RowPatch<'a, T> {
    pub block: usize,
    pub position: usize,
    pub row: &'a [T],
    pub match_norm: bool,
}

pub(crate) fn flatten_patches<T: Scalar>(patches: &[PatchSpec<T>]) -> Vec<RowPatch<'_, T>> {
    let mut out = Vec::new();
    for p in patches {
        for (row, &pos) in p.payload.rows().into_iter().zip(&p.target_positions) {
            out.push(RowPatch {
                block: p.target_layer,
                position: pos,
                row,
                match_norm: p.match_norm,
            });
        }
    }
    out
}

/// Applies patches aimed at `block` to rows `p0..p0+n` of `x`.
pub(crate) fn apply_patches<T: Scalar>(x: &mut [T], d: usize, p0: usize, block: usize, patches: &[RowPatch<'_, T>]) {
    let n = x.len() / d;
    for p in patches.iter().filter(|p| p.block == block) {
        if p.position < p0 || p.position >= p0 + n {
            continue;
        }
        let dst = &mut x[(p.position - p0) * d..(p.position - p0 + 1) * d];
        if p.match_norm {
            let target = dot(dst, dst).sqrt();
            let src = dot(p.row, p.row).sqrt();
            let s = if src > T::zero() { target / src } else { T::zero() };
            for (o, &v) in dst.iter_mut().zip(p.row) {
                *o = v * s;
            }
        } else {
            dst.copy_from_slice(p.row);
        }
    }
}

/// Runs one transformer block over `n` new rows, extending the cache.
pub(crate) fn block_forward<T: Scalar>(
    cfg: &ModelConfig,
    p: &[T],
    bl: &BlockLayout,
    x: &mut [T],
    kv: &mut LayerKv<T>,
    tape: Option<&mut BlockTape<T>>,
) {
    let d = cfg.d_model;
    let f = cfg.d_ff();
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let n = x.len() / d;
    let p0 = kv.k.len() / d;
    let total = p0 + n;

    let mut xhat1 = vec![T::zero(); n * d];
    let mut rstd1 = vec![T::zero(); n];
    let mut a = vec![T::zero(); n * d];
    layer_norm(x, &p[bl.ln1_g.clone()], &p[bl.ln1_b.clone()], &mut a, &mut xhat1, &mut rstd1, d);

    let mut q = vec![T::zero(); n * d];
    let mut k = vec![T::zero(); n * d];
    let mut v = vec![T::zero(); n * d];
    matmul(&a, &p[bl.wq.clone()], Some(&p[bl.bq.clone()]), &mut q, n, d, d);
    matmul(&a, &p[bl.wk.clone()], Some(&p[bl.bk.clone()]), &mut k, n, d, d);
    matmul(&a, &p[bl.wv.clone()], Some(&p[bl.bv.clone()]), &mut v, n, d, d);
    kv.k.extend_from_slice(&k);
    kv.v.extend_from_slice(&v);

    let keep_probs = tape.is_some();
    let mut probs = vec![T::zero(); heads * n * total];
    let mut o = vec![T::zero(); n * d];
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let (di, toti) = (d as isize, total as isize);
    for h in 0..heads {
        let hs = h * dh;
        let s_h = &mut probs[h * n * total..(h + 1) * n * total];
        // SAFETY: head slices are read with row stride d inside q, k and v;
        // every product stays within its buffer.
        unsafe {
            T::gemm(n, dh, total, scale, &q[hs..], di, 1, &kv.k[hs..], 1, di, T::zero(), s_h, toti, 1);
        }
        for i in 0..n {
            let row = &mut s_h[i * total..(i + 1) * total];
            let lim = p0 + i + 1;
            softmax_in_place(&mut row[..lim]);
            row[lim..].fill(T::zero());
        }
        unsafe {
            T::gemm(n, total, dh, T::one(), s_h, toti, 1, &kv.v[hs..], di, 1, T::zero(), &mut o[hs..], di, 1);
        }
    }
    if !keep_probs {
        probs = Vec::new();
    }

    let mut proj = vec![T::zero(); n * d];
    matmul(&o, &p[bl.wo.clone()], Some(&p[bl.bo.clone()]), &mut proj, n, d, d);
    add_into(&proj, x);

    let mut xhat2 = vec![T::zero(); n * d];
    let mut rstd2 = vec![T::zero(); n];
    let mut m = vec![T::zero(); n * d];
    layer_norm(x, &p[bl.ln2_g.clone()], &p[bl.ln2_b.clone()], &mut m, &mut xhat2, &mut rstd2, d);
    let mut hpre = vec![T::zero(); n * f];
    matmul(&m, &p[bl.w1.clone()], Some(&p[bl.b1.clone()]), &mut hpre, n, d, f);
    let hact: Vec<T> = hpre.iter().map(|&z| gelu(z)).collect();
    let mut out = proj;
    matmul(&hact, &p[bl.w2.clone()], Some(&p[bl.b2.clone()]), &mut out, n, f, d);
    add_into(&out, x);

    if let Some(t) = tape {
        *t = BlockTape {
            xhat1,
            rstd1,
            a,
            q,
            k,
            v,
            probs,
            o,
            xhat2,
            rstd2,
            m,
            hpre,
            hact,
        };
    }
}

/// Logits for every position of one pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// Row-major `positions × vocab`.
    pub logits: Vec<T>,
    pub vocab_size: usize,
    /// One entry per capture request, in request order.
    pub captured: Vec<ActivationVector<T>>,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn positions(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.logits[i * self.vocab_size..(i + 1) * self.vocab_size]
    }
}

/// Everything a pass can be asked to do besides computing states.
pub(crate) struct PassHooks<'a, T> {
    pub patches: &'a [RowPatch<'a, T>],
    pub captures: &'a [(usize, usize)],
    pub captured: Vec<Option<Vec<T>>>,
    pub stop_after: Option<usize>,
    pub tapes: Option<&'a mut Vec<BlockTape<T>>>,
}

impl<T: Scalar> ModelHandle<T> {
    pub(crate) fn embed(&self, tokens: &[TokenId], p0: usize) -> Vec<T> {
        let d = self.config.d_model;
        let lay = &self.params.layout;
        let tok = &self.params.data[lay.tok_emb.clone()];
        let pos = &self.params.data[lay.pos_emb.clone()];
        let mut x = vec![T::zero(); tokens.len() * d];
        for (i, &t) in tokens.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            let te = &tok[t as usize * d..(t as usize + 1) * d];
            let pe = &pos[(p0 + i) * d..(p0 + i + 1) * d];
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }
        x
    }

    /// Processes `tokens` as positions `cache.len()..`, returning the
    /// residual stream after the last executed block.
    pub(crate) fn run_rows(&self, cache: &mut KvCache<T>, tokens: &[TokenId], hooks: &mut PassHooks<'_, T>) -> Vec<T> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let p0 = cache.len;
        let n = tokens.len();
        let mut x = self.embed(tokens, p0);
        let last = hooks.stop_after.unwrap_or(cfg.n_layers);
        if let Some(t) = hooks.tapes.as_deref_mut() {
            t.clear();
        }
        for b in 1..=last {
            apply_patches(&mut x, d, p0, b, hooks.patches);
            let tape = hooks.tapes.as_deref_mut().map(|t| {
                t.push(BlockTape::default());
                t.last_mut().expect("just pushed")
            });
            block_forward(cfg, &self.params.data, &self.params.layout.blocks[b - 1], &mut x, &mut cache.layers[b - 1], tape);
            for (slot, &(layer, pos)) in hooks.captured.iter_mut().zip(hooks.captures) {
                if layer == b && pos >= p0 && pos < p0 + n {
                    *slot = Some(x[(pos - p0) * d..(pos - p0 + 1) * d].to_vec());
                }
            }
        }
        cache.len += n;
        x
    }

    /// Final layer norm and unembedding of `n` residual rows.
    pub(crate) fn logits_rows(&self, x: &[T]) -> Vec<T> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let n = x.len() / d;
        let lay = &self.params.layout;
        let mut h = vec![T::zero(); n * d];
        let mut xh = vec![T::zero(); n * d];
        let mut rs = vec![T::zero(); n];
        layer_norm(x, &self.params.data[lay.lnf_g.clone()], &self.params.data[lay.lnf_b.clone()], &mut h, &mut xh, &mut rs, d);
        let mut logits = vec![T::zero(); n * v];
        matmul(&h, &self.params.data[lay.unembed.clone()], None, &mut logits, n, d, v);
        logits
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(LabError::Empty("token sequence"));
        }
        check_range("sequence length", tokens.len(), 1, self.config.context_len)?;
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(LabError::OutOfRange {
                what: "token id",
                got: bad as usize,
                lo: 0,
                hi: self.config.vocab_size - 1,
            });
        }
        Ok(())
    }

    fn check_patches(&self, patches: &[PatchSpec<T>], prompt_len: usize) -> Result<()> {
        for p in patches {
            p.validate(self.config.n_layers, self.config.d_model, prompt_len)?;
        }
        Ok(())
    }

    /// Full pass with optional patches and captures. `captures` holds
    /// `(layer, position)` pairs; layers are 1-based block outputs.
    pub fn forward(&self, tokens: &[TokenId], patches: &[PatchSpec<T>], captures: &[(usize, usize)]) -> Result<ForwardOutput<T>> {
        self.check_tokens(tokens)?;
        self.check_patches(patches, tokens.len())?;
        for &(layer, pos) in captures {
            check_range("capture layer", layer, 1, self.config.n_layers)?;
            check_range("capture position", pos, 0, tokens.len() - 1)?;
        }
        let rows = flatten_patches(patches);
        let mut hooks = PassHooks {
            patches: &rows,
            captures,
            captured: vec![None; captures.len()],
            stop_after: None,
            tapes: None,
        };
        let mut cache = KvCache::new(self.config.n_layers);
        let x = self.run_rows(&mut cache, tokens, &mut hooks);
        let logits = self.logits_rows(&x);
        let captured = hooks
            .captured
            .into_iter()
            .zip(captures)
            .map(|(v, &(layer, pos))| ActivationVector {
                layer,
                token_index: pos,
                values: v.expect("validated capture"),
                source_model_id: self.id.clone(),
            })
            .collect();
        Ok(ForwardOutput {
            logits,
            vocab_size: self.config.vocab_size,
            captured,
        })
    }

    /// Evaluates independent sequences one after another.
    pub fn forward_batch(&self, items: &[Vec<TokenId>]) -> Result<Vec<ForwardOutput<T>>> {
        items.iter().map(|t| self.forward(t, &[], &[])).collect()
    }

    /// Residual stream at `layer` for every position. Stops after that block.
    pub fn capture_layer(&self, tokens: &[TokenId], layer: usize) -> Result<ActivationMatrix<T>> {
        self.capture_layer_patched(tokens, layer, &[])
    }

    pub fn capture_layer_patched(&self, tokens: &[TokenId], layer: usize, patches: &[PatchSpec<T>]) -> Result<ActivationMatrix<T>> {
        self.check_tokens(tokens)?;
        check_range("capture layer", layer, 1, self.config.n_layers)?;
        self.check_patches(patches, tokens.len())?;
        let rows = flatten_patches(patches);
        let mut hooks = PassHooks {
            patches: &rows,
            captures: &[],
            captured: Vec::new(),
            stop_after: Some(layer),
            tapes: None,
        };
        let mut cache = KvCache::new(self.config.n_layers);
        let x = self.run_rows(&mut cache, tokens, &mut hooks);
        let d = self.config.d_model;
        Ok(ActivationMatrix {
            layer,
            rows: x.chunks_exact(d).map(<[T]>::to_vec).collect(),
            source_model_id: self.id.clone(),
        })
    }

    /// State of the final token at `layer`.
    pub fn capture_last(&self, tokens: &[TokenId], layer: usize) -> Result<ActivationVector<T>> {
        let m = self.capture_layer(tokens, layer)?;
        Ok(m.last().expect("non-empty tokens"))
    }

    /// Greedy decoding. Patches act on the prompt during prefill; the
    /// patched positions' keys and values stay in the cache for every
    /// later step. Returns generated ids without the end-of-text token.
    pub fn generate(&self, prefix: &[TokenId], max_new: usize, patches: &[PatchSpec<T>]) -> Result<Vec<TokenId>> {
        self.check_tokens(prefix)?;
        if max_new == 0 {
            return Err(LabError::Precondition("max_new must be at least 1".into()));
        }
        self.check_patches(patches, prefix.len())?;
        let rows = flatten_patches(patches);
        let mut cache = KvCache::new(self.config.n_layers);
        let mut hooks = PassHooks {
            patches: &rows,
            captures: &[],
            captured: Vec::new(),
            stop_after: None,
            tapes: None,
        };
        let d = self.config.d_model;
        let x = self.run_rows(&mut cache, prefix, &mut hooks);
        let mut last = x[x.len() - d..].to_vec();
        let mut out = Vec::new();
        let mut no_patch = PassHooks {
            patches: &[],
            captures: &[],
            captured: Vec::new(),
            stop_after: None,
            tapes: None,
        };
        for step in 0..max_new {
            let logits = self.logits_rows(&last);
            let next = argmax(&logits) as TokenId;
            if next == EOT_ID {
                break;
            }
            out.push(next);
            if step + 1 == max_new || cache.len() >= self.config.context_len {
                break;
            }
            last = self.run_rows(&mut cache, &[next], &mut no_patch);
        }
        Ok(out)
    }

    /// Log-probability of `continuation` given `prefix`, summed over tokens.
    pub fn score_continuation(&self, prefix: &[TokenId], continuation: &[TokenId]) -> Result<T> {
        let mut all = prefix.to_vec();
        all.extend_from_slice(continuation);
        let out = self.forward(&all, &[], &[])?;
        let mut total = T::zero();
        for (i, &t) in continuation.iter().enumerate() {
            let row = out.row(prefix.len() + i - 1);
            total = total + row[t as usize] - crate::linalg::log_sum_exp(row);
        }
        Ok(total)
    }
}
