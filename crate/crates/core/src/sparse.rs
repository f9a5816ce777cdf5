//! Compressed sparse row storage and a banded Cholesky factorization.
//!
//! Structured meshes number nodes row by row, so every assembled operator is
//! banded with half-bandwidth of order `nx`. That is all the factorization
//! below relies on.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Duplicates are summed in triplet order, so the result is a pure
    /// function of the input sequence.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of range");
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in per_row {
            // stable sort keeps triplet order among equal columns
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `x^T A x`; requires a square matrix.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let ax = self.mul_vec(x);
        x.iter().zip(&ax).map(|(a, b)| a * b).sum()
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for (c, v) in self.row(i) {
                out[c] += v * xi;
            }
        }
        out
    }

    /// Sparse times dense. Works on the transposed block so that each row
    /// update is a contiguous axpy.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let p = x.ncols();
        let xt = x.transpose();
        let src = xt.as_slice();
        let mut out = DMatrix::zeros(p, self.nrows);
        let dst = out.as_mut_slice();
        for i in 0..self.nrows {
            let row = &mut dst[i * p..(i + 1) * p];
            for (c, v) in self.row(i) {
                for (o, s) in row.iter_mut().zip(&src[c * p..(c + 1) * p]) {
                    *o += v * s;
                }
            }
        }
        out.transpose()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                d[(i, c)] += v;
            }
        }
        d
    }

    /// Extracts rows `rows` and columns `cols` (both given as ordered index
    /// lists into this matrix).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                let nc = col_map[c];
                if nc != usize::MAX {
                    triplets.push((new_r, nc, v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &triplets)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(c, _)| i.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    /// Max relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                worst = worst.max((v - self.get(c, i)).abs());
            }
        }
        worst / scale
    }

    /// `A^T A` for a sparse `A`, returned as sparse.
    pub fn gram(&self) -> Self {
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            let row: Vec<(usize, f64)> = self.row(i).collect();
            for &(c1, v1) in &row {
                for &(c2, v2) in &row {
                    triplets.push((c1, c2, v1 * v2));
                }
            }
        }
        Self::from_triplets(self.ncols, self.ncols, &triplets)
    }

    /// `self + s * other` for equally shaped matrices.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            triplets.extend(self.row(i).map(|(c, v)| (i, c, v)));
            triplets.extend(other.row(i).map(|(c, v)| (i, c, s * v)));
        }
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }
}

/// Cholesky factor `L` of a symmetric positive definite banded matrix, stored
/// row-wise with `bw + 1` entries per row (`band[i][bw]` is the diagonal).
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
    min_pivot: f64,
    max_pivot: f64,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let bw = a.half_bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        // lower triangle, offset so that column j of row i sits at bw - (i - j)
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * w + bw - (i - j)] += v;
                }
            }
        }
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = band[i * w + bw - (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= band[i * w + bw - (i - k)] * band[j * w + bw - (j - k)];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    let d = s.sqrt();
                    min_pivot = min_pivot.min(d);
                    max_pivot = max_pivot.max(d);
                    band[i * w + bw] = d;
                } else {
                    band[i * w + bw - (i - j)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self {
            n,
            bw,
            band,
            min_pivot,
            max_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Squared pivot ratio; a cheap lower estimate of the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        (self.max_pivot / self.min_pivot).powi(2)
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.bw + 1) + self.bw - (i - j)]
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let bw = self.bw;
        for i in 0..self.n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l(i, k) * x[k];
            }
            x[i] = s / self.l(i, i);
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(self.n) {
                s -= self.l(k, i) * x[k];
            }
            x[i] = s / self.l(i, i);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves for every column of `b` at once, on the transposed block.
    pub fn solve_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.n);
        let p = b.ncols();
        let bw = self.bw;
        let mut xt = b.transpose();
        let x = xt.as_mut_slice();
        for i in 0..self.n {
            let (done, rest) = x.split_at_mut(i * p);
            let cur = &mut rest[..p];
            for k in i.saturating_sub(bw)..i {
                let l = self.l(i, k);
                for (c, d) in cur.iter_mut().zip(&done[k * p..(k + 1) * p]) {
                    *c -= l * d;
                }
            }
            let d = 1.0 / self.l(i, i);
            cur.iter_mut().for_each(|c| *c *= d);
        }
        for i in (0..self.n).rev() {
            let (head, done) = x.split_at_mut((i + 1) * p);
            let cur = &mut head[i * p..];
            for k in (i + 1)..(i + bw + 1).min(self.n) {
                let l = self.l(k, i);
                let off = (k - i - 1) * p;
                for (c, d) in cur.iter_mut().zip(&done[off..off + p]) {
                    *c -= l * d;
                }
            }
            let d = 1.0 / self.l(i, i);
            cur.iter_mut().for_each(|c| *c *= d);
        }
        xt.transpose()
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn banded_cholesky_matches_dense_solve() {
        let a = laplace_1d(12);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let x = BandedCholesky::factor(&a).unwrap().solve(&b);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let dense = a.to_dense().cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for (xi, di) in x.iter().zip(dense.iter()) {
            assert!((xi - di).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_cholesky_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(
            BandedCholesky::factor(&a),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn gram_matches_dense_product() {
        let a = CsrMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, 3.0), (2, 1, -1.0)]);
        let d = a.to_dense();
        let g = a.gram().to_dense();
        assert!((g - d.transpose() * d).abs().max() < 1e-14);
    }
}
