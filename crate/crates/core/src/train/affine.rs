// SPDX-License-Identifier: MIT OR Apache-2.0

//! Least-squares affine maps between activation spaces.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::cholesky_solve;
use crate::model::ActivationVector;
use crate::scalar::Scalar;

/// Ridge damping added to the normal equations.
pub const RIDGE_LAMBDA: f64 = 1e-6;

/// `y = matrix · x + bias`, `matrix` is `dst_dim × src_dim` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap<T> {
    pub src_dim: usize,
    pub dst_dim: usize,
    pub matrix: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit<T> {
    pub map: AffineMap<T>,
    /// Mean squared residual over all pairs and output coordinates.
    pub residual_mse: T,
}

impl<T: Scalar> AffineMap<T> {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![T::zero(); dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = T::one();
        }
        Self {
            src_dim: dim,
            dst_dim: dim,
            matrix,
            bias: vec![T::zero(); dim],
        }
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.src_dim {
            return Err(LabError::Dimension {
                what: "affine map input",
                expected: self.src_dim,
                got: x.len(),
            });
        }
        Ok((0..self.dst_dim)
            .map(|r| crate::linalg::dot(&self.matrix[r * self.src_dim..(r + 1) * self.src_dim], x) + self.bias[r])
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Fits `dst ≈ M·src + b` by ridge-damped least squares on centred data.
/// Needs at least `src_dim + 1` pairs.
pub fn fit_affine<T: Scalar>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<AffineFit<T>> {
    let Some((s0, d0)) = pairs.first() else {
        return Err(LabError::Empty("affine pairs"));
    };
    let (s, t) = (s0.len(), d0.len());
    if s == 0 || t == 0 {
        return Err(LabError::Empty("affine vectors"));
    }
    if pairs.len() < s + 1 {
        return Err(LabError::Precondition(format!(
            "affine fit needs at least {} pairs for source dimension {s}, got {}",
            s + 1,
            pairs.len()
        )));
    }
    for (x, y) in pairs {
        if x.len() != s || y.len() != t {
            return Err(LabError::Dimension {
                what: "affine pair",
                expected: s,
                got: x.len(),
            });
        }
        if !x.iter().chain(y).all(|v| v.is_finite()) {
            return Err(LabError::NonFinite("affine pair".into()));
        }
    }
    let n = T::lit(pairs.len() as f64);
    let mut mx = vec![T::zero(); s];
    let mut my = vec![T::zero(); t];
    for (x, y) in pairs {
        crate::linalg::add_into(x, &mut mx);
        crate::linalg::add_into(y, &mut my);
    }
    mx.iter_mut().for_each(|v| *v = *v / n);
    my.iter_mut().for_each(|v| *v = *v / n);

    // G = XcᵀXc + λI (s×s), R = XcᵀYc (s×t)
    let mut g = vec![T::zero(); s * s];
    let mut r = vec![T::zero(); s * t];
    let mut xc = vec![T::zero(); s];
    let mut yc = vec![T::zero(); t];
    for (x, y) in pairs {
        for i in 0..s {
            xc[i] = x[i] - mx[i];
        }
        for j in 0..t {
            yc[j] = y[j] - my[j];
        }
        for i in 0..s {
            crate::linalg::axpy(xc[i], &xc, &mut g[i * s..(i + 1) * s]);
            crate::linalg::axpy(xc[i], &yc, &mut r[i * t..(i + 1) * t]);
        }
    }
    for i in 0..s {
        g[i * s + i] = g[i * s + i] + T::lit(RIDGE_LAMBDA);
    }
    cholesky_solve(&g, &mut r, s, t).ok_or_else(|| LabError::NonFinite("affine normal equations".into()))?;
    // r now holds Mᵀ (s×t)
    let mut matrix = vec![T::zero(); t * s];
    for i in 0..s {
        for j in 0..t {
            matrix[j * s + i] = r[i * t + j];
        }
    }
    let mut bias = my.clone();
    for j in 0..t {
        bias[j] = my[j] - crate::linalg::dot(&matrix[j * s..(j + 1) * s], &mx);
    }
    let map = AffineMap {
        src_dim: s,
        dst_dim: t,
        matrix,
        bias,
    };
    let mut sse = T::zero();
    for (x, y) in pairs {
        let pred = map.apply(x)?;
        for (p, q) in pred.iter().zip(y) {
            sse = sse + (*p - *q) * (*p - *q);
        }
    }
    let residual_mse = sse / T::lit((pairs.len() * t) as f64);
    if !map.is_finite() {
        return Err(LabError::NonFinite("affine map".into()));
    }
    Ok(AffineFit { map, residual_mse })
}

/// [`fit_affine`] over captured activation pairs.
pub fn fit_affine_vectors<T: Scalar>(pairs: &[(ActivationVector<T>, ActivationVector<T>)]) -> Result<AffineFit<T>> {
    let raw: Vec<(Vec<T>, Vec<T>)> = pairs.iter().map(|(a, b)| (a.values.clone(), b.values.clone())).collect();
    fit_affine(&raw)
}
