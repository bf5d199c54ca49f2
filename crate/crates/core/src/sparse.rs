//! Compressed sparse row matrices and a banded LU factorization.
//!
//! Finite element matrices on the meshes built here are banded once the
//! degrees of freedom are numbered lexicographically, so a band solver is
//! all the direct-solve machinery the crate needs.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed; every listed position stays in the structure even if its sum
    /// is zero.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Keeps entries with `|a_ij| > drop_tol`.
    pub fn from_dense(m: &DMatrix<f64>, drop_tol: f64) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)].abs() > drop_tol {
                    triplets.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets)
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

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Whether `(i, j)` is part of the sparsity structure.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).0.binary_search(&j).is_ok()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `Aᵀ x` without forming the transpose.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// `A X` for a dense column-major block `X`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            let xs = xc.as_slice();
            let mut oc = out.column_mut(c);
            for i in 0..self.nrows {
                let (cols, vals) = self.row(i);
                oc[i] = cols.iter().zip(vals).map(|(&j, &v)| v * xs[j]).sum();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut triplets = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut touched = vec![false; other.ncols];
        let mut pattern: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&j, &b) in ocols.iter().zip(ovals) {
                    if !touched[j] {
                        touched[j] = true;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &pattern {
                triplets.push((i, j, acc[j]));
                acc[j] = 0.0;
                touched[j] = false;
            }
            pattern.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, &triplets)
    }

    pub fn add(&self, other: &CsrMatrix) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let triplets: Vec<_> = self.triplets().chain(other.triplets()).collect();
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max absolute row sum; an upper bound on every eigenvalue modulus.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Entrywise symmetry check relative to the largest entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.triplets()
            .all(|(i, j, v)| (v - self.get(j, i)).abs() <= rel_tol * scale)
    }

    /// Lower and upper bandwidth of the structure.
    pub fn bandwidth(&self) -> (usize, usize) {
        self.triplets().fold((0, 0), |(lo, up), (i, j, _)| {
            if i > j {
                (lo.max(i - j), up)
            } else {
                (lo, up.max(j - i))
            }
        })
    }

    /// Returns `self - shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let n = self.nrows.min(self.ncols);
        let diag: Vec<_> = (0..n).map(|i| (i, i, -shift)).collect();
        let triplets: Vec<_> = self.triplets().chain(diag).collect();
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }

    /// Writes `i j value` lines, one per stored entry.
    pub fn write_coo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

/// LU factorization of a banded matrix without pivoting.
///
/// Valid whenever every leading principal minor is nonzero, which holds for
/// matrices whose symmetric part is definite; coercive Galerkin matrices and
/// their shifted normal matrices are all of that kind.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(invalid("banded LU needs a square matrix"));
        }
        let n = a.nrows();
        let (lower, upper) = a.bandwidth();
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        for (i, j, v) in a.triplets() {
            band[i * width + (j + lower - i)] += v;
        }
        let tiny = f64::EPSILON * a.max_abs().max(f64::MIN_POSITIVE);
        let mut lu = Self { n, lower, upper, band };
        for k in 0..n {
            let pivot = lu.at(k, k);
            if !(pivot.abs() > tiny) {
                return Err(Error::SingularSystem { row: k });
            }
            let row_end = (k + lower).min(n - 1);
            let col_end = (k + upper).min(n - 1);
            for i in k + 1..=row_end {
                let l = lu.at(i, k) / pivot;
                *lu.at_mut(i, k) = l;
                if l != 0.0 {
                    for j in k + 1..=col_end {
                        let u = lu.at(k, j);
                        *lu.at_mut(i, j) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.lower + self.upper + 1) + (j + self.lower - i)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let w = self.lower + self.upper + 1;
        &mut self.band[i * w + (j + self.lower - i)]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let start = i.saturating_sub(self.lower);
            let s: f64 = (start..i).map(|j| self.at(i, j) * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let end = (i + self.upper).min(n - 1);
            let s: f64 = (i + 1..=end).map(|j| self.at(i, j) * x[j]).sum();
            x[i] = (x[i] - s) / self.at(i, i);
        }
        x
    }

    /// Solves `Aᵀ x = b` with the same factors.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        // Uᵀ z = b
        for i in 0..n {
            let start = i.saturating_sub(self.upper);
            let s: f64 = (start..i).map(|j| self.at(j, i) * x[j]).sum();
            x[i] = (x[i] - s) / self.at(i, i);
        }
        // Lᵀ x = z
        for i in (0..n).rev() {
            let end = (i + self.lower).min(n - 1);
            let s: f64 = (i + 1..=end).map(|j| self.at(j, i) * x[j]).sum();
            x[i] -= s;
        }
        x
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, lo: f64, d: f64, up: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d));
            if i > 0 {
                t.push((i, i - 1, lo));
            }
            if i + 1 < n {
                t.push((i, i + 1, up));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0), (0, 0, 3.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.nnz(), 2);
        assert!(!m.contains(0, 1));
    }

    #[test]
    fn banded_lu_solves_nonsymmetric_system() {
        let a = tridiag(12, -1.5, 4.0, -0.5);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let b = a.mul_vec(&x);
        let lu = BandedLu::factor(&a).unwrap();
        let got = lu.solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-13);
        }
        let bt = a.transpose_mul_vec(&x);
        let got_t = lu.solve_transpose(&bt);
        for (g, e) in got_t.iter().zip(&x) {
            assert!((g - e).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 0.0), (0, 1, 1.0), (1, 0, 1.0)]);
        assert!(matches!(BandedLu::factor(&a), Err(Error::SingularSystem { row: 0 })));
    }

    #[test]
    fn matmul_and_transpose_agree_with_dense() {
        let a = tridiag(5, 1.0, 2.0, -3.0);
        let b = a.transpose().add(&CsrMatrix::identity(5));
        let dense = a.to_dense() * b.to_dense();
        assert!((a.matmul(&b).to_dense() - dense).norm() < 1e-14);
        assert_eq!(a.bandwidth(), (1, 1));
        assert!(!a.is_symmetric(1e-12));
        assert!(a.add(&a.transpose()).is_symmetric(1e-12));
    }

    #[test]
    fn coo_export_lists_every_entry() {
        let a = tridiag(3, -1.0, 2.0, -1.0);
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 7);
        assert!(text.contains("1 0 -1e0"));
    }
}
