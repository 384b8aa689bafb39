//! Small dense and mask-supported matrices used by the networks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `self · x`
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// Accumulates `selfᵀ · y` into `out`.
    pub fn add_matvec_t(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
    }

    /// Accumulates the outer product `y xᵀ` into `self`.
    pub fn add_outer(&mut self, y: &[T], x: &[T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == T::zero() {
                continue;
            }
            for (w, &xc) in self.row_mut(r).iter_mut().zip(x) {
                *w += yr * xc;
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Sparsity pattern in compressed-row form; every row's columns are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPattern {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl SupportPattern {
    pub fn from_rows(n_cols: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for (r, cols) in rows.iter().enumerate() {
            let mut cols = cols.clone();
            cols.sort_unstable();
            cols.dedup();
            if let Some(&c) = cols.last() {
                if c >= n_cols {
                    return Err(Error::Argument(format!(
                        "support column {c} out of range in row {r} (n_cols = {n_cols})"
                    )));
                }
            }
            indices.extend(cols);
            indptr.push(indices.len());
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            indptr,
            indices,
        })
    }

    pub fn from_coords(n_rows: usize, n_cols: usize, coords: &[(usize, usize)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_rows];
        for &(r, c) in coords {
            if r >= n_rows {
                return Err(Error::Argument(format!("support row {r} out of range")));
            }
            rows[r].push(c);
        }
        Self::from_rows(n_cols, &rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    #[inline]
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.indptr[r]..self.indptr[r + 1]
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).binary_search(&c).is_ok()
    }

    /// `(row, col)` for every stored position, in storage order.
    pub fn coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            for &c in self.row(r) {
                out.push((r, c));
            }
        }
        out
    }
}

/// Square-or-rectangular weight matrix whose entries live only on a fixed
/// support; positions outside the support are structurally zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix<T> {
    support: Arc<SupportPattern>,
    values: Vec<T>,
}

impl<T: Scalar> MaskedMatrix<T> {
    pub fn zeros(support: Arc<SupportPattern>) -> Self {
        let values = vec![T::zero(); support.nnz()];
        Self { support, values }
    }

    pub fn from_values(support: Arc<SupportPattern>, values: Vec<T>) -> Result<Self> {
        if values.len() != support.nnz() {
            return Err(Error::shape("masked values", &[support.nnz()], &[values.len()]));
        }
        Ok(Self { support, values })
    }

    pub fn support(&self) -> &Arc<SupportPattern> {
        &self.support
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.support.n_rows, self.support.n_cols]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        match self.support.row(r).binary_search(&c) {
            Ok(i) => self.values[self.support.indptr[r] + i],
            Err(_) => T::zero(),
        }
    }

    /// Materializes the full matrix with explicit zeros off the support.
    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.support.n_rows, self.support.n_cols);
        for r in 0..self.support.n_rows {
            for i in self.support.row_range(r) {
                m.set(r, self.support.indices[i], self.values[i]);
            }
        }
        m
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.support.n_rows)
            .map(|r| {
                self.support
                    .row_range(r)
                    .fold(T::zero(), |acc, i| acc + self.values[i] * x[self.support.indices[i]])
            })
            .collect()
    }

    /// Accumulates `selfᵀ · y` into `out`.
    pub fn add_matvec_t(&self, y: &[T], out: &mut [T]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr == T::zero() {
                continue;
            }
            for i in self.support.row_range(r) {
                out[self.support.indices[i]] += self.values[i] * yr;
            }
        }
    }

    /// Accumulates the outer product `y xᵀ` restricted to the support.
    pub fn add_outer(&mut self, y: &[T], x: &[T]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr == T::zero() {
                continue;
            }
            for i in self.support.row_range(r) {
                self.values[i] += yr * x[self.support.indices[i]];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern() -> Arc<SupportPattern> {
        Arc::new(SupportPattern::from_rows(3, &[vec![0, 2], vec![1], vec![2, 0, 1]]).unwrap())
    }

    #[test]
    fn masked_matvec_equals_dense() {
        let m = MaskedMatrix::from_values(pattern(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let dense = m.to_dense();
        let x = [0.5, -1.0, 2.0];
        assert_eq!(m.matvec(&x), dense.matvec(&x));
        let mut a = vec![0.0; 3];
        let mut b = vec![0.0; 3];
        m.add_matvec_t(&x, &mut a);
        dense.add_matvec_t(&x, &mut b);
        assert_eq!(a, b);
        assert_eq!(dense.get(1, 0), 0.0);
        assert_eq!(m.get(2, 2), 6.0);
    }

    #[test]
    fn pattern_rows_are_sorted_and_deduped() {
        let p = SupportPattern::from_rows(4, &[vec![3, 1, 1], vec![]]).unwrap();
        assert_eq!(p.row(0), &[1, 3]);
        assert_eq!(p.row(1), &[] as &[usize]);
        assert!(SupportPattern::from_rows(2, &[vec![2]]).is_err());
    }

    #[test]
    fn outer_product_stays_on_support() {
        let mut m: MaskedMatrix<f64> = MaskedMatrix::zeros(pattern());
        m.add_outer(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        let d = m.to_dense();
        assert_eq!(d.get(0, 1), 0.0);
        assert_eq!(d.get(0, 2), 3.0);
        assert_eq!(d.get(2, 1), 2.0);
    }
}
