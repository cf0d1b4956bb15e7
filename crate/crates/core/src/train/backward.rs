// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reverse-mode gradients for one example.

use std::ops::Range;

use super::Example;
use crate::linalg::{
    axpy, colsum_acc, dot, gelu_grad, layer_norm, layer_norm_backward, log_sum_exp, matmul, matmul_at_acc, matmul_bt,
};
use crate::model::{flatten_patches, BlockTape, KvCache, ModelHandle, PassHooks};
use crate::model::ModelConfig;
use crate::scalar::Scalar;

/// Two disjoint mutable sub-slices; `a` must end at or before `b` starts.
fn pair_mut<'a, T>(g: &'a mut [T], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

fn block_backward<T: Scalar>(
    cfg: &ModelConfig,
    p: &[T],
    g: &mut [T],
    bl: &crate::model::Layout,
    b: usize,
    tape: &BlockTape<T>,
    dx: &mut [T],
) {
    let bl = &bl.blocks[b - 1];
    let d = cfg.d_model;
    let f = cfg.d_ff();
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let n = dx.len() / d;

    // MLP: x_out = x_mid + gelu(LN2(x_mid)·W1 + b1)·W2 + b2
    let mut dh_act = vec![T::zero(); n * f];
    matmul_bt(dx, &p[bl.w2.clone()], &mut dh_act, n, f, d, false);
    matmul_at_acc(&tape.hact, dx, &mut g[bl.w2.clone()], n, f, d);
    colsum_acc(dx, &mut g[bl.b2.clone()], d);
    for (dz, &z) in dh_act.iter_mut().zip(&tape.hpre) {
        *dz = *dz * gelu_grad(z);
    }
    matmul_at_acc(&tape.m, &dh_act, &mut g[bl.w1.clone()], n, d, f);
    colsum_acc(&dh_act, &mut g[bl.b1.clone()], f);
    let mut dm = vec![T::zero(); n * d];
    matmul_bt(&dh_act, &p[bl.w1.clone()], &mut dm, n, d, f, false);
    {
        let (dg, db) = pair_mut(g, &bl.ln2_g, &bl.ln2_b);
        layer_norm_backward(&dm, &tape.xhat2, &tape.rstd2, &p[bl.ln2_g.clone()], dg, db, dx, d);
    }

    // attention: x_mid = x_in + attn(LN1(x_in))·Wo + bo
    let mut d_o = vec![T::zero(); n * d];
    matmul_bt(dx, &p[bl.wo.clone()], &mut d_o, n, d, d, false);
    matmul_at_acc(&tape.o, dx, &mut g[bl.wo.clone()], n, d, d);
    colsum_acc(dx, &mut g[bl.bo.clone()], d);

    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let (di, ni) = (d as isize, n as isize);
    let mut ds = vec![T::zero(); n * n];
    for h in 0..heads {
        let hs = h * dh;
        let probs = &tape.probs[h * n * n..(h + 1) * n * n];
        // SAFETY (all gemm calls): head slices use row stride d inside
        // n×d buffers; square matrices are n×n.
        unsafe {
            // dP = dO_h · V_hᵀ
            T::gemm(n, dh, n, T::one(), &d_o[hs..], di, 1, &tape.v[hs..], 1, di, T::zero(), &mut ds, ni, 1);
        }
        for i in 0..n {
            let pr = &probs[i * n..i * n + i + 1];
            let dr = &mut ds[i * n..(i + 1) * n];
            let acc = dot(pr, &dr[..=i]);
            for j in 0..=i {
                dr[j] = pr[j] * (dr[j] - acc) * scale;
            }
            dr[i + 1..].fill(T::zero());
        }
        unsafe {
            // dQ_h = dS · K_h ; dK_h = dSᵀ · Q_h ; dV_h = Pᵀ · dO_h
            T::gemm(n, n, dh, T::one(), &ds, ni, 1, &tape.k[hs..], di, 1, T::zero(), &mut dq[hs..], di, 1);
            T::gemm(n, n, dh, T::one(), &ds, 1, ni, &tape.q[hs..], di, 1, T::zero(), &mut dk[hs..], di, 1);
            T::gemm(n, n, dh, T::one(), probs, 1, ni, &d_o[hs..], di, 1, T::zero(), &mut dv[hs..], di, 1);
        }
    }
    let mut da = vec![T::zero(); n * d];
    for (dmat, w, bias) in [(&dq, &bl.wq, &bl.bq), (&dk, &bl.wk, &bl.bk), (&dv, &bl.wv, &bl.bv)] {
        matmul_at_acc(&tape.a, dmat, &mut g[w.clone()], n, d, d);
        colsum_acc(dmat, &mut g[bias.clone()], d);
        matmul_bt(dmat, &p[w.clone()], &mut da, n, d, d, true);
    }
    let (dg, db) = pair_mut(g, &bl.ln1_g, &bl.ln1_b);
    layer_norm_backward(&da, &tape.xhat1, &tape.rstd1, &p[bl.ln1_g.clone()], dg, db, dx, d);
}

/// Accumulates `weight · ∂loss/∂θ` into `grad`, where loss is the summed
/// cross-entropy over counted positions. Returns `(summed loss, count)`.
pub(crate) fn example_grad<T: Scalar>(
    model: &ModelHandle<T>,
    ex: &Example<T>,
    answer_only: bool,
    weight: T,
    grad: &mut [T],
) -> (T, usize) {
    let cfg = &model.config;
    let d = cfg.d_model;
    let vocab = cfg.vocab_size;
    let lay = &model.params.layout;
    let p = &model.params.data;
    let n = ex.tokens.len();

    let rows = flatten_patches(&ex.patches);
    let mut tapes = Vec::with_capacity(cfg.n_layers);
    let mut hooks = PassHooks {
        patches: &rows,
        captures: &[],
        captured: Vec::new(),
        stop_after: None,
        tapes: Some(&mut tapes),
    };
    let mut cache = KvCache::new(cfg.n_layers);
    let x = model.run_rows(&mut cache, &ex.tokens, &mut hooks);

    let counted: Vec<usize> = (0..n).filter(|&i| !answer_only || ex.answer_mask[i]).collect();
    let c = counted.len();
    if c == 0 {
        return (T::zero(), 0);
    }
    let mut xs = vec![T::zero(); c * d];
    for (r, &i) in counted.iter().enumerate() {
        xs[r * d..(r + 1) * d].copy_from_slice(&x[i * d..(i + 1) * d]);
    }
    let mut hf = vec![T::zero(); c * d];
    let mut xhat = vec![T::zero(); c * d];
    let mut rstd = vec![T::zero(); c];
    layer_norm(&xs, &p[lay.lnf_g.clone()], &p[lay.lnf_b.clone()], &mut hf, &mut xhat, &mut rstd, d);
    let mut logits = vec![T::zero(); c * vocab];
    matmul(&hf, &p[lay.unembed.clone()], None, &mut logits, c, d, vocab);

    let mut loss = T::zero();
    for (r, &i) in counted.iter().enumerate() {
        let row = &mut logits[r * vocab..(r + 1) * vocab];
        let t = ex.targets[i] as usize;
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let target_logit = row[t];
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        loss = loss + max + sum.ln() - target_logit;
        let w = weight / sum;
        for v in row.iter_mut() {
            *v = *v * w;
        }
        row[t] = row[t] - weight;
    }

    matmul_at_acc(&hf, &logits, &mut grad[lay.unembed.clone()], c, d, vocab);
    let mut dhf = vec![T::zero(); c * d];
    matmul_bt(&logits, &p[lay.unembed.clone()], &mut dhf, c, d, vocab, false);
    let mut dxs = vec![T::zero(); c * d];
    {
        let (dg, db) = pair_mut(grad, &lay.lnf_g, &lay.lnf_b);
        layer_norm_backward(&dhf, &xhat, &rstd, &p[lay.lnf_g.clone()], dg, db, &mut dxs, d);
    }
    let mut dx = vec![T::zero(); n * d];
    for (r, &i) in counted.iter().enumerate() {
        dx[i * d..(i + 1) * d].copy_from_slice(&dxs[r * d..(r + 1) * d]);
    }

    for b in (1..=cfg.n_layers).rev() {
        block_backward(cfg, p, grad, lay, b, &tapes[b - 1], &mut dx);
        for rp in rows.iter().filter(|rp| rp.block == b) {
            dx[rp.position * d..(rp.position + 1) * d].fill(T::zero());
        }
    }

    let tok_off = lay.tok_emb.start;
    let pos_off = lay.pos_emb.start;
    for (i, &t) in ex.tokens.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        if row.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let to = tok_off + t as usize * d;
        axpy(T::one(), row, &mut grad[to..to + d]);
        let po = pos_off + i * d;
        axpy(T::one(), row, &mut grad[po..po + d]);
    }
    (loss, c)
}

/// Mean cross-entropy over counted positions, without gradients.
pub(crate) fn example_loss<T: Scalar>(model: &ModelHandle<T>, ex: &Example<T>, answer_only: bool) -> (T, usize) {
    let out = match model.forward(&ex.tokens, &ex.patches, &[]) {
        Ok(o) => o,
        Err(_) => return (T::nan(), 1),
    };
    let mut loss = T::zero();
    let mut c = 0;
    for i in 0..ex.tokens.len() {
        if answer_only && !ex.answer_mask[i] {
            continue;
        }
        let row = out.row(i);
        loss = loss + log_sum_exp(row) - row[ex.targets[i] as usize];
        c += 1;
    }
    (loss, c)
}
