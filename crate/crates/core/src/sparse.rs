//! Compressed sparse row storage and a banded Cholesky factorization.
//!
//! Matrices are accumulated as triplets and finalized into CSR with sorted
//! column indices; duplicate triplets are summed. The stored pattern is the
//! structural one, so explicit zeros produced by cancellation stay in it.

use crate::error::{Error, Result};

/// Triplet accumulator that finalizes into a [`CsrMatrix`].
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(value);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Sorts by (row, col), sums duplicates and builds the CSR arrays.
    pub fn build(self, symmetric: bool) -> CsrMatrix {
        let TripletBuilder {
            nrows,
            ncols,
            rows,
            cols,
            vals,
        } = self;

        // bucket by row
        let mut counts = vec![0usize; nrows + 1];
        for &r in &rows {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut order = vec![0usize; vals.len()];
        for (t, &r) in rows.iter().enumerate() {
            order[next[r]] = t;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(vals.len());
        let mut values = Vec::with_capacity(vals.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            scratch.clear();
            scratch.extend(order[counts[i]..counts[i + 1]].iter().map(|&t| (cols[t], vals[t])));
            scratch.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < scratch.len() {
                let c = scratch[k].0;
                let mut v = 0.0;
                while k < scratch.len() && scratch[k].0 == c {
                    v += scratch[k].1;
                    k += 1;
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }

        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
            symmetric,
        }
    }
}

/// Sparse matrix in compressed sparse row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
            symmetric: nrows == ncols,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Entry lookup by binary search; zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates over `(row, col, value)` of all stored entries.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// `y = self * x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `y += alpha * self * x`
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let s: f64 = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
            *yi += alpha * s;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha * self + beta * other`, on the union pattern.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch {
                what: "matrix sum",
                expected: self.nrows,
                got: other.nrows,
            });
        }
        let mut b = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for (i, j, v) in self.triplets() {
            b.push(i, j, alpha * v);
        }
        for (i, j, v) in other.triplets() {
            b.push(i, j, beta * v);
        }
        Ok(b.build(self.symmetric && other.symmetric))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        self.triplets()
            .map(|(i, j, _)| i.abs_diff(j))
            .max()
            .unwrap_or(0)
    }

    /// Row-major dense copy. Intended for small matrices and checks.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows * self.ncols];
        for (i, j, v) in self.triplets() {
            d[i * self.ncols + j] += v;
        }
        d
    }

    /// Maximum absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }
}

const BLOCK: usize = 8;

/// Cholesky factor `L L^T` of a symmetric positive-definite band matrix.
///
/// Rows of `L` are stored densely over the band: entry `(i, k)` with
/// `i - b <= k <= i` lives at `i * (b + 1) + (k + b - i)`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                what: "square matrix",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let n = a.nrows();
        let bw = a.half_bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for (i, j, v) in a.triplets() {
            if j <= i {
                l[i * w + (j + bw - i)] = v;
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for k in lo_i..=i {
                let lo = lo_i.max(k.saturating_sub(bw));
                let mut s = l[i * w + (k + bw - i)];
                let ri = i * w + bw - i;
                let rk = k * w + bw - k;
                for j in lo..k {
                    s -= l[ri + j] * l[rk + j];
                }
                if k == i {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    l[ri + i] = s.sqrt();
                } else {
                    l[ri + k] = s / l[rk + k];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Stored entries of the factor (band storage, including padding zeros).
    pub fn factor_len(&self) -> usize {
        self.l.len()
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        self.solve_columns(rhs, 1);
    }

    /// Solves for `ncols` right-hand sides stored column-major in `data`.
    pub fn solve_columns(&self, data: &mut [f64], ncols: usize) {
        let n = self.n;
        assert_eq!(data.len(), n * ncols);
        let mut buf = vec![[0.0f64; BLOCK]; n];
        let mut start = 0;
        while start < ncols {
            let width = BLOCK.min(ncols - start);
            for (i, row) in buf.iter_mut().enumerate() {
                for c in 0..BLOCK {
                    row[c] = if c < width { data[(start + c) * n + i] } else { 0.0 };
                }
            }
            self.solve_block(&mut buf);
            for (i, row) in buf.iter().enumerate() {
                for c in 0..width {
                    data[(start + c) * n + i] = row[c];
                }
            }
            start += width;
        }
    }

    fn solve_block(&self, buf: &mut [[f64; BLOCK]]) {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        // forward: L y = b
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let mut acc = buf[i];
            for j in lo..i {
                let lij = self.l[ri + j];
                let yj = &buf[j];
                for c in 0..BLOCK {
                    acc[c] -= lij * yj[c];
                }
            }
            let d = 1.0 / self.l[ri + i];
            for c in 0..BLOCK {
                acc[c] *= d;
            }
            buf[i] = acc;
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let d = 1.0 / self.l[ri + i];
            let mut xi = buf[i];
            for c in 0..BLOCK {
                xi[c] *= d;
            }
            buf[i] = xi;
            for j in lo..i {
                let lij = self.l[ri + j];
                let yj = &mut buf[j];
                for c in 0..BLOCK {
                    yj[c] -= lij * xi[c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i > 0 {
                b.push(i, i - 1, -1.0);
                b.push(i - 1, i, -1.0);
            }
        }
        b.build(true)
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(1, 0, 1.0);
        b.push(0, 1, 2.0);
        b.push(1, 0, 3.0);
        b.push(0, 0, 0.0);
        let m = b.build(false);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.col_idx(), &[0, 1, 0]);
    }

    #[test]
    fn band_cholesky_solves_tridiagonal() {
        let n = 13;
        let a = laplace_1d(n);
        let chol = BandCholesky::factor(&a).unwrap();
        assert_eq!(chol.bandwidth(), 1);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let mut rhs = vec![0.0; n];
        a.mul_vec(&x_true, &mut rhs);
        chol.solve_in_place(&mut rhs);
        for (a, b) in rhs.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn many_columns_match_single_solves() {
        let n = 20;
        let a = laplace_1d(n).linear_combination(1.0, &CsrMatrix::identity(n), 0.3).unwrap();
        let chol = BandCholesky::factor(&a).unwrap();
        let ncols = 11;
        let data: Vec<f64> = (0..n * ncols).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
        let mut block = data.clone();
        chol.solve_columns(&mut block, ncols);
        for c in 0..ncols {
            let mut col = data[c * n..(c + 1) * n].to_vec();
            chol.solve_in_place(&mut col);
            assert_eq!(col, &block[c * n..(c + 1) * n]);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = laplace_1d(4).scaled(-1.0);
        assert!(matches!(
            BandCholesky::factor(&a),
            Err(Error::NotPositiveDefinite { pivot: 0, .. })
        ));
    }
}
