//! Dense row-major matrices, factor pairs and the planted ground truth.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{dim, param, Result};
use crate::rng::mix64;

/// Problem dimensions: a `d1 x d2` matrix of target rank `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
}

impl Dims {
    pub fn new(d1: usize, d2: usize, r: usize) -> Result<Self> {
        if d1 == 0 || d2 == 0 || r == 0 {
            return param(format!(
                "dimensions must be positive, got ({d1}, {d2}, {r})"
            ));
        }
        if r > d1.min(d2) {
            return param(format!("rank {r} exceeds min({d1}, {d2})"));
        }
        Ok(Self { d1, d2, r })
    }
}

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return param(format!("non-finite entry at flat index {pos}"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        assert!(k <= self.cols);
        Self::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        Self::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Frobenius inner product `<self, other>`.
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "inner shape mismatch");
        dot(&self.data, &other.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest row Euclidean norm.
    pub fn two_inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| norm2(self.row(i)))
            .fold(0.0, f64::max)
    }

    /// Largest singular value by power iteration on `m^T m`.
    pub fn spectral_norm(&self) -> f64 {
        const REL_TOL: f64 = 1e-10;
        const MAX_ITERS: usize = 10_000;
        if self.data.iter().all(|&v| v == 0.0) || self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        // deterministic pseudo-random start, so no fixed vector is orthogonal to every input
        let mut v: Vec<f64> = (0..self.cols)
            .map(|j| (mix64(j as u64 ^ 0xA5A5) >> 11) as f64 / (1u64 << 53) as f64 + 0.5)
            .collect();
        normalize(&mut v);
        let mut estimate = 0.0;
        for _ in 0..MAX_ITERS {
            let mv = self.mul_vec(&v);
            let mut w = self.t_mul_vec(&mv);
            let next = norm2(&mv);
            let wn = norm2(&w);
            if wn == 0.0 {
                return next;
            }
            w.iter_mut().for_each(|x| *x /= wn);
            v = w;
            if (next - estimate).abs() <= REL_TOL * next {
                // one more product with the updated vector tightens the estimate
                return norm2(&self.mul_vec(&v)).max(next);
            }
            estimate = next;
        }
        estimate
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn t_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &c) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += c * a;
            }
        }
        out
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "vstack column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Scales column `j` by `c[j]`.
    pub fn scale_columns(&self, c: &[f64]) -> Self {
        assert_eq!(c.len(), self.cols);
        let mut out = self.clone();
        for i in 0..self.rows {
            for (v, &s) in out.row_mut(i).iter_mut().zip(c) {
                *v *= s;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// The iterate `F = [X; Y]`: a `d1 x r` factor and a `d2 x r` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

impl FactorPair {
    pub fn new(x: DenseMatrix, y: DenseMatrix) -> Result<Self> {
        if x.cols() != y.cols() {
            return dim(format!(
                "factor column counts differ: {} vs {}",
                x.cols(),
                y.cols()
            ));
        }
        Ok(Self { x, y })
    }

    pub fn zeros(d1: usize, d2: usize, r: usize) -> Self {
        Self {
            x: DenseMatrix::zeros(d1, r),
            y: DenseMatrix::zeros(d2, r),
        }
    }

    pub fn rank(&self) -> usize {
        self.x.cols()
    }

    pub fn d1(&self) -> usize {
        self.x.rows()
    }

    pub fn d2(&self) -> usize {
        self.y.rows()
    }

    /// `(d1 + d2) x r` stacked matrix.
    pub fn stacked(&self) -> DenseMatrix {
        self.x.vstack(&self.y)
    }

    /// Splits a stacked `(d1 + d2) x r` matrix back into factors.
    pub fn from_stacked(f: &DenseMatrix, d1: usize) -> Self {
        Self {
            x: f.row_block(0, d1),
            y: f.row_block(d1, f.rows()),
        }
    }

    /// `X Y^T`.
    pub fn product(&self) -> DenseMatrix {
        self.x.matmul_t(&self.y)
    }

    /// Right-multiplies both factors by the same `r x r` matrix.
    pub fn right_mul(&self, q: &DenseMatrix) -> Self {
        Self {
            x: self.x.matmul(q),
            y: self.y.matmul(q),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.x.frobenius_norm().powi(2) + self.y.frobenius_norm().powi(2)).sqrt()
    }
}

/// The planted matrix `M* = U* diag(sigma*) V*^T` with its condition number
/// and incoherence.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub u_star: DenseMatrix,
    pub sigma_star: Vec<f64>,
    pub v_star: DenseMatrix,
    pub m_star: DenseMatrix,
    pub kappa: f64,
    pub mu: f64,
}

impl GroundTruth {
    /// Assembles a ground truth from orthonormal factors and descending
    /// positive singular values.
    pub fn from_factors(u: DenseMatrix, sigma: Vec<f64>, v: DenseMatrix) -> Result<Self> {
        let r = sigma.len();
        if r == 0 || u.cols() != r || v.cols() != r {
            return dim(format!(
                "factor shapes {:?}, {:?} do not match {r} singular values",
                u.shape(),
                v.shape()
            ));
        }
        if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return param("singular values must be positive and finite");
        }
        if sigma.windows(2).any(|w| w[0] < w[1]) {
            return param("singular values must be descending");
        }
        let mu = crate::metrics::incoherence(&u, &v)?;
        let m_star = u.scale_columns(&sigma).matmul_t(&v);
        Ok(Self {
            kappa: sigma[0] / sigma[r - 1],
            u_star: u,
            sigma_star: sigma,
            v_star: v,
            m_star,
            mu,
        })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d1: self.u_star.rows(),
            d2: self.v_star.rows(),
            r: self.sigma_star.len(),
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_star[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_star[self.sigma_star.len() - 1]
    }

    fn sqrt_sigma(&self) -> Vec<f64> {
        self.sigma_star.iter().map(|s| s.sqrt()).collect()
    }

    /// `X* = U* Sigma*^{1/2}`.
    pub fn x_star(&self) -> DenseMatrix {
        self.u_star.scale_columns(&self.sqrt_sigma())
    }

    /// `Y* = V* Sigma*^{1/2}`.
    pub fn y_star(&self) -> DenseMatrix {
        self.v_star.scale_columns(&self.sqrt_sigma())
    }

    pub fn f_star(&self) -> FactorPair {
        FactorPair {
            x: self.x_star(),
            y: self.y_star(),
        }
    }
}
