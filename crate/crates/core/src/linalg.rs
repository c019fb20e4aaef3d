//! Small dense matrix kernel.
//!
//! Every matrix GEE needs to invert (working covariances, information
//! matrices) is symmetric positive definite, so the only factorization here
//! is Cholesky. Matrices are row-major and immutable once built.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting bad lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::DomainError { what: "matrix entries", value: *bad });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        Matrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub(crate) fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub(crate) fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("add".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Product with a vector.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn tr_mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch("transpose product".into()));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for (i, ai) in a.iter().enumerate() {
                if *ai == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, bj) in dst.iter_mut().zip(b) {
                    *d += ai * bj;
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute asymmetry relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Submatrix picking the given rows and columns of a square template.
    pub(crate) fn select(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), idx.len(), |i, j| self[(idx[i], idx[j])])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = m`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Matrix,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// Diagonal jitter that had to be added to factor the input (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!("rhs of length {} for {n}x{n}", b.len())));
        }
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        let l = &self.l;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
    }

    /// `log det` of the factored matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn try_cholesky(m: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// On a non-positive pivot the factorization is retried once with
/// `1e-10 · mean(diag)` added to the diagonal; correlation estimates sitting
/// on the boundary of the valid region need that nudge.
pub fn spd_factor(m: &Matrix) -> Result<CholeskyFactor> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} is not square", m.rows, m.cols)));
    }
    if m.asymmetry() > 1e-10 {
        return Err(Error::NotPositiveDefinite);
    }
    if let Some(l) = try_cholesky(m, 0.0) {
        return Ok(CholeskyFactor { l, jitter: 0.0 });
    }
    let n = m.rows.max(1) as f64;
    let jitter = 1e-10 * m.trace().abs() / n;
    if jitter > 0.0 {
        if let Some(l) = try_cholesky(m, jitter) {
            log::debug!("cholesky needed diagonal jitter {jitter:e}");
            return Ok(CholeskyFactor { l, jitter });
        }
    }
    Err(Error::NotPositiveDefinite)
}

pub fn spd_solve(f: &CholeskyFactor, b: &Matrix) -> Result<Matrix> {
    let n = f.dim();
    if b.rows != n {
        return Err(Error::DimensionMismatch(format!("rhs has {} rows, factor is {n}x{n}", b.rows)));
    }
    let mut out = Matrix::zeros(n, b.cols);
    let mut col = vec![0.0; n];
    for j in 0..b.cols {
        for i in 0..n {
            col[i] = b[(i, j)];
        }
        f.solve_in_place(&mut col);
        for i in 0..n {
            out.set(i, j, col[i]);
        }
    }
    Ok(out)
}

/// Inverse of the factored matrix, symmetrized.
pub fn spd_inverse(f: &CholeskyFactor) -> Matrix {
    let n = f.dim();
    let inv = spd_solve(f, &Matrix::identity(n)).expect("identity conforms");
    Matrix::from_fn(n, n, |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)]))
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += aik * b[(k, j)];
            }
        }
    }
    Ok(out)
}

/// `trace(a·b) = Σ_ij a_ij·b_ji`, without forming the product.
pub fn trace_of_product(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols != b.rows || a.rows != b.cols {
        return Err(Error::DimensionMismatch(format!(
            "trace of {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut s = 0.0;
    for i in 0..a.rows {
        for j in 0..a.cols {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    Ok(s)
}

/// Full column rank check on `x` via a pivot-tolerant Cholesky of the
/// column-normalized cross product.
pub fn has_full_column_rank(x: &Matrix) -> bool {
    if x.rows < x.cols {
        return false;
    }
    let xtx = x.tr_mul(x).expect("self product conforms");
    let p = xtx.rows;
    let norms: Vec<f64> = xtx.diagonal().iter().map(|d| d.sqrt()).collect();
    if norms.iter().any(|n| !(*n > 0.0)) {
        return false;
    }
    let scaled = Matrix::from_fn(p, p, |i, j| xtx[(i, j)] / (norms[i] * norms[j]));
    match try_cholesky(&scaled, 0.0) {
        Some(l) => l.diagonal().iter().all(|d| d * d > 1e-10),
        None => false,
    }
}
