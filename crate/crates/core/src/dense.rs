//! Row-major dense matrices and the head-split view used by multi-head
//! attention.

use rand::Rng;

use crate::census;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "dense data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Uniform entries in `[lo, hi)`, drawn in `f64` so that a fixed seed
    /// produces the same underlying values in every precision mode.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| T::from_f64_c(rng.gen_range(lo..hi)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    /// Copy of the row range `[start, end)` as a new matrix.
    pub fn row_slice(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Copy of the column range `[start, end)` as a new matrix.
    pub fn col_slice(&self, start: usize, end: usize) -> Self {
        let width = end - start;
        Self::from_fn(self.rows, width, |i, j| self.get(i, start + j))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "add: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "add_assign: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// Vertical concatenation in argument order. All parts must agree on cols.
    pub fn concat_rows(parts: &[Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(Error::Shape("concat_rows: column counts differ".into()));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Self { rows, cols, data })
    }

    /// Horizontal concatenation in argument order. All parts must agree on rows.
    pub fn concat_cols(parts: &[Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// True if every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard dense product `a * b`.
///
/// Accumulation order over the inner dimension is fixed ascending, so results
/// are bit-reproducible for identical inputs.
pub fn matmul<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    census::record_mm();
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = b.row(k);
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Elementwise relative difference, maximized over the slice.
///
/// The denominator is floored at 1e-6 so that agreement on entries far below
/// working scale is not penalized; at ordinary magnitudes this is the plain
/// relative difference.
pub fn max_rel_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_rel_diff on unequal lengths");
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let x = x.to_f64_c();
        let y = y.to_f64_c();
        let denom = x.abs().max(y.abs()).max(1e-6);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}

/// Largest absolute difference over the slice.
pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_abs_diff on unequal lengths");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x.to_f64_c() - y.to_f64_c()).abs())
        .fold(0.0, f64::max)
}

/// Dense matrix reinterpreted as `[rows][heads][head_dim]` with
/// `heads * head_dim = cols`. The flat layout is identical to the row-major
/// dense layout, so converting in either direction moves the buffer without
/// touching values.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadedMatrix<T> {
    rows: usize,
    heads: usize,
    head_dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> HeadedMatrix<T> {
    pub fn zeros(rows: usize, heads: usize, head_dim: usize) -> Self {
        Self { rows, heads, head_dim, data: vec![T::zero(); rows * heads * head_dim] }
    }

    pub fn from_dense(m: DenseMatrix<T>, heads: usize) -> Result<Self> {
        if heads == 0 || m.cols % heads != 0 {
            return Err(Error::Shape(format!(
                "head count {heads} does not divide feature dim {}",
                m.cols
            )));
        }
        Ok(Self { rows: m.rows, heads, head_dim: m.cols / heads, data: m.data })
    }

    pub fn to_dense(self) -> DenseMatrix<T> {
        DenseMatrix {
            rows: self.rows,
            cols: self.heads * self.head_dim,
            data: self.data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// The `head_dim` slice for (row, head).
    pub fn at(&self, row: usize, head: usize) -> &[T] {
        let start = (row * self.heads + head) * self.head_dim;
        &self.data[start..start + self.head_dim]
    }

    pub fn at_mut(&mut self, row: usize, head: usize) -> &mut [T] {
        let start = (row * self.heads + head) * self.head_dim;
        &mut self.data[start..start + self.head_dim]
    }
}
