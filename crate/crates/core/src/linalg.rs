// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major kernels.
//!
//! Every reduction runs in a fixed order so results are bitwise
//! reproducible for a given build. Matrices are flat slices with the
//! shape passed alongside.

use crate::scalar::Scalar;

const LANES: usize = 8;

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    let s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    (s01 + s23) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

#[inline]
pub fn add_into<T: Scalar>(x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + *xi;
    }
}

/// `out[m×n] = a[m×k] · b[k×n] (+ bias)`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], bias: Option<&[T]>, out: &mut [T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    let beta = match bias {
        Some(bv) => {
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bv);
            }
            T::one()
        }
        None => T::zero(),
    };
    // SAFETY: shapes asserted above; row-major strides stay in bounds.
    unsafe {
        T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, out, n as isize, 1);
    }
}

/// `out[m×k] (+)= dout[m×n] · b[k×n]ᵀ`
pub fn matmul_bt<T: Scalar>(dout: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    assert_eq!(dout.len(), m * n);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * k);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: bᵀ is read with row stride 1 and column stride n inside b.
    unsafe {
        T::gemm(m, n, k, T::one(), dout, n as isize, 1, b, 1, n as isize, beta, out, k as isize, 1);
    }
}

/// `out[k×n] += a[m×k]ᵀ · dout[m×n]`
pub fn matmul_at_acc<T: Scalar>(a: &[T], dout: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(dout.len(), m * n);
    assert_eq!(out.len(), k * n);
    // SAFETY: aᵀ is read with row stride 1 and column stride k inside a.
    unsafe {
        T::gemm(k, m, n, T::one(), a, 1, k as isize, dout, n as isize, 1, T::one(), out, n as isize, 1);
    }
}

/// Column sums of `x[m×n]` accumulated into `out[n]`.
pub fn colsum_acc<T: Scalar>(x: &[T], out: &mut [T], n: usize) {
    for row in x.chunks_exact(n) {
        add_into(row, out);
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Writes normalized rows `xhat` and returns `1/σ` per row.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    out: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
    d: usize,
) {
    let inv_d = T::one() / T::lit(d as f64);
    let eps = T::lit(LN_EPS);
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * d..(r + 1) * d];
        let o = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            xh[j] = (row[j] - mean) * rs;
            o[j] = xh[j] * gain[j] + bias[j];
        }
    }
}

/// Backward through layer norm; accumulates into `dgain`, `dbias`, and `dx`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
    d: usize,
) {
    let inv_d = T::one() / T::lit(d as f64);
    let mut dxh = vec![T::zero(); d];
    for r in 0..rstd.len() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            dgain[j] = dgain[j] + dyr[j] * xh[j];
            dbias[j] = dbias[j] + dyr[j];
            dxh[j] = dyr[j] * gain[j];
            m1 = m1 + dxh[j];
            m2 = m2 + dxh[j] * xh[j];
        }
        m1 = m1 * inv_d;
        m2 = m2 * inv_d;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            dxr[j] = dxr[j] + rstd[r] * (dxh[j] - m1 - xh[j] * m2);
        }
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    let inv = T::one() / sum;
    for x in v.iter_mut() {
        *x = *x * inv;
    }
}

/// `log Σ exp(v)`
pub fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    // 0.5·(1 + tanh(u)) = σ(2u)
    let u2 = T::lit(2.0 * GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    x / (T::one() + (-u2).exp())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let u2 = T::lit(2.0 * GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    let s = T::one() / (T::one() + (-u2).exp());
    s + x * s * (T::one() - s) * T::lit(2.0 * GELU_C) * (T::one() + T::lit(3.0 * GELU_K) * x * x)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Solves `A x = b` for symmetric positive definite `A[n×n]` (Cholesky).
/// Returns `None` if `A` is not positive definite. `b` holds `cols`
/// right-hand sides as an `n×cols` row-major matrix and is overwritten.
pub fn cholesky_solve<T: Scalar>(a: &[T], b: &mut [T], n: usize, cols: usize) -> Option<()> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                let v = a[i * n + i] - s;
                if v <= T::zero() || !v.is_finite() {
                    return None;
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    // forward: L y = b
    for i in 0..n {
        for c in 0..cols {
            let mut s = b[i * cols + c];
            for p in 0..i {
                s = s - l[i * n + p] * b[p * cols + c];
            }
            b[i * cols + c] = s / l[i * n + i];
        }
    }
    // backward: Lᵀ x = y
    for i in (0..n).rev() {
        for c in 0..cols {
            let mut s = b[i * cols + c];
            for p in i + 1..n {
                s = s - l[p * n + i] * b[p * cols + c];
            }
            b[i * cols + c] = s / l[i * n + i];
        }
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (5, 11, 7);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 13 % 11) as f64 - 5.0) / 3.0).collect();
        let want = naive_matmul(&a, &b, m, k, n);
        let mut got = vec![0.0; m * n];
        matmul(&a, &b, None, &mut got, m, k, n);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
        // dA = dOut·Bᵀ ; compare with naive on transposed b
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut da = vec![0.0; m * k];
        matmul_bt(&want, &b, &mut da, m, k, n, false);
        let want_da = naive_matmul(&want, &bt, m, n, k);
        for (x, y) in da.iter().zip(&want_da) {
            assert!((x - y).abs() < 1e-9);
        }
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut db = vec![0.0; k * n];
        matmul_at_acc(&a, &want, &mut db, m, k, n);
        let want_db = naive_matmul(&at, &want, k, m, n);
        for (x, y) in db.iter().zip(&want_db) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0f64, -1.0, -0.2, 0.0, 0.4, 1.5, 2.7] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_difference() {
        let d = 6;
        let x: Vec<f64> = vec![0.3, -1.2, 2.0, 0.7, -0.1, 0.9, 1.0, 0.5, -0.5, 0.25, 3.0, -2.0];
        let g: Vec<f64> = vec![1.0, 0.5, -0.7, 1.2, 0.9, 1.1];
        let b: Vec<f64> = vec![0.1; d];
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |x: &[f64]| {
            let mut o = vec![0.0; 12];
            let mut xh = vec![0.0; 12];
            let mut rs = vec![0.0; 2];
            layer_norm(x, &g, &b, &mut o, &mut xh, &mut rs, d);
            dot(&o, &w)
        };
        let mut o = vec![0.0; 12];
        let mut xh = vec![0.0; 12];
        let mut rs = vec![0.0; 2];
        layer_norm(&x, &g, &b, &mut o, &mut xh, &mut rs, d);
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        let mut dx = vec![0.0; 12];
        layer_norm_backward(&w, &xh, &rs, &g, &mut dg, &mut db, &mut dx, d);
        for i in 0..12 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-6, "i={i} fd={fd} an={}", dx[i]);
        }
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a: Vec<f64> = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let x_true = vec![1.0, -2.0, 0.5];
        let mut b = vec![0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += a[i * 3 + j] * x_true[j];
            }
        }
        cholesky_solve(&a, &mut b, 3, 1).unwrap();
        for (x, y) in b.iter().zip(&x_true) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(cholesky_solve(&[1.0, 2.0, 2.0, 1.0], &mut [1.0, 1.0], 2, 1).is_none());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32, 0.0]), 0);
    }
}
