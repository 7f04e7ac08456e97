//! Compressed sparse row matrices with shareable patterns, and wrappers over
//! the faer sparse Cholesky and `LDL^T` factorizations.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, LltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{ColMut, Conj, Par, Side};

use crate::error::{Error, Result};

/// Row-compressed nonzero structure, sorted column indices per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    pub fn from_rows(nrows: usize, ncols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        assert_eq!(rows.len(), nrows);
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            assert!(r.last().is_none_or(|&c| c < ncols), "column out of range");
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.row_ptr[row]..self.row_ptr[row + 1]
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Storage position of `(row, col)`, if structurally present.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let r = self.row_range(row);
        self.col_idx[r.clone()]
            .binary_search(&col)
            .ok()
            .map(|k| r.start + k)
    }

    /// Iterates `(row, col)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row_range(r).map(move |k| (r, self.col_idx[k])))
    }
}

impl SparsityPattern {
    /// Sub-pattern keeping rows/columns whose map entry is not `usize::MAX`;
    /// the maps give the new indices. Also returns, for every stored entry of
    /// `self`, its position in the sub-pattern (or `usize::MAX`).
    pub fn restrict(&self, row_map: &[usize], col_map: &[usize], nrows: usize, ncols: usize) -> (SparsityPattern, Vec<usize>) {
        let mut rows = vec![Vec::new(); nrows];
        for (r, c) in self.entries() {
            if row_map[r] != usize::MAX && col_map[c] != usize::MAX {
                rows[row_map[r]].push(col_map[c]);
            }
        }
        let sub = SparsityPattern::from_rows(nrows, ncols, rows);
        let map = self
            .entries()
            .map(|(r, c)| {
                if row_map[r] != usize::MAX && col_map[c] != usize::MAX {
                    sub.find(row_map[r], col_map[c]).expect("entry kept")
                } else {
                    usize::MAX
                }
            })
            .collect();
        (sub, map)
    }
}

/// Solves a tridiagonal system with the Thomas algorithm. `lower[i]` couples
/// row `i + 1` to column `i`, `upper[i]` couples row `i` to column `i + 1`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(lower.len() + 1 == n.max(1) && upper.len() + 1 == n.max(1) && rhs.len() == n);
    if n == 0 {
        return Vec::new();
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / m;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// Sparse matrix over a shared pattern.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_values(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Self {
        assert_eq!(pattern.nnz(), values.len());
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.find(row, col).map_or(0.0, |k| self.values[k])
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.mul_vec_add(1.0, x, &mut y);
        y
    }

    /// `y += alpha A x`
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols());
        let p = &self.pattern;
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in p.row_range(r) {
                acc += self.values[k] * x[p.col_idx[k]];
            }
            *yr += alpha * acc;
        }
    }

    /// `y += alpha A^T x`
    pub fn mul_transpose_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows());
        let p = &self.pattern;
        for (r, xr) in x.iter().enumerate() {
            let s = alpha * xr;
            if s == 0.0 {
                continue;
            }
            for k in p.row_range(r) {
                y[p.col_idx[k]] += self.values[k] * s;
            }
        }
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols()];
        self.mul_transpose_vec_add(1.0, x, &mut y);
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = &self.pattern;
        let mut total = 0.0;
        for (r, xr) in x.iter().enumerate() {
            if *xr == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for k in p.row_range(r) {
                acc += self.values[k] * y[p.col_idx[k]];
            }
            total += xr * acc;
        }
        total
    }

    /// `self += alpha * other` (patterns must match).
    pub fn axpy(&mut self, alpha: f64, other: &CsrMatrix) {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        self.pattern
            .entries()
            .zip(&self.values)
            .map(|((r, c), v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows(), self.ncols());
        for ((r, c), v) in self.pattern.entries().zip(&self.values) {
            d[(r, c)] += v;
        }
        d
    }
}


/// Cholesky factorization of a symmetric positive definite CSR matrix.
pub struct SparseCholesky {
    symbolic: SymbolicCholesky<usize>,
    l: Vec<f64>,
    n: usize,
}

impl SparseCholesky {
    /// `a` must be structurally and numerically symmetric.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let p = a.pattern();
        // CSR of a symmetric matrix is a valid CSC of the same matrix.
        let sym = SymbolicSparseColMat::new_checked(n, n, p.row_ptr.clone(), None, p.col_idx.clone());
        let symbolic = factorize_symbolic_cholesky(
            sym.as_ref(),
            Side::Lower,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| Error::Solver(format!("symbolic factorization: {e:?}")))?;
        let mut l = vec![0.0; symbolic.len_val()];
        let mut mem = MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()));
        symbolic
            .factorize_numeric_llt(
                &mut l,
                SparseColMatRef::new(sym.as_ref(), a.values()),
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| Error::Solver(format!("sparse Cholesky: {e:?}")))?;
        Ok(Self { symbolic, l, n })
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        let f = LltRef::new(&self.symbolic, &self.l);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        f.solve_in_place_with_conj(
            Conj::No,
            ColMut::from_slice_mut(rhs).as_mat_mut(),
            Par::Seq,
            MemStack::new(&mut mem),
        );
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Lower-triangular pattern of a symmetric saddle point matrix
/// `[[A, B^T], [B, 0]]` whose leading `n_positive` unknowns carry a positive
/// definite block, with a fill-reducing symbolic factorization.
///
/// Factorization perturbs the trailing diagonal by `-delta` (a quasi-definite
/// matrix has an `LDL^T` factorization for every symmetric ordering) and
/// recovers the unperturbed solution by iterative refinement.
pub struct SymmetricPattern {
    n: usize,
    n_positive: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Storage position of the diagonal of every trailing unknown.
    trailing_diag: Vec<usize>,
    symbolic: SymbolicCholesky<usize>,
}

impl SymmetricPattern {
    /// Builds the pattern from lower-triangular `(row, col)` entries
    /// (`row >= col`; repeats are merged). Returns the pattern and the storage
    /// position of each input entry.
    pub fn from_entries(n: usize, n_positive: usize, entries: &[(usize, usize)]) -> Result<(Self, Vec<usize>)> {
        if n_positive > n {
            return Err(Error::Solver(format!("{n_positive} positive unknowns exceed size {n}")));
        }
        // (col, row, input index); trailing diagonals get index usize::MAX
        let mut keyed: Vec<(usize, usize, usize)> = Vec::with_capacity(entries.len() + n - n_positive);
        for (k, &(r, c)) in entries.iter().enumerate() {
            if r < c || r >= n {
                return Err(Error::Solver(format!("entry ({r}, {c}) not in the lower triangle of a {n}x{n} matrix")));
            }
            keyed.push((c, r, k));
        }
        keyed.extend((n_positive..n).map(|i| (i, i, usize::MAX)));
        keyed.sort_unstable();

        let mut positions = vec![0; entries.len()];
        let mut trailing_diag = vec![0; n - n_positive];
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx: Vec<usize> = Vec::with_capacity(keyed.len());
        let mut last: Option<(usize, usize)> = None;
        for &(c, r, k) in &keyed {
            if last != Some((c, r)) {
                row_idx.push(r);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
            let pos = row_idx.len() - 1;
            if k == usize::MAX {
                trailing_diag[r - n_positive] = pos;
            } else {
                positions[k] = pos;
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let sym = SymbolicSparseColMat::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
        let symbolic = factorize_symbolic_cholesky(
            sym.as_ref(),
            Side::Lower,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| Error::Solver(format!("symbolic factorization: {e:?}")))?;
        Ok((
            Self {
                n,
                n_positive,
                col_ptr,
                row_idx,
                trailing_diag,
                symbolic,
            },
            positions,
        ))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn n_positive(&self) -> usize {
        self.n_positive
    }

    /// Numeric factorization of the matrix with lower-triangular `values`.
    pub fn factorize(self: &Arc<Self>, values: Vec<f64>) -> Result<SaddleFactor> {
        assert_eq!(values.len(), self.nnz());
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let delta = 1e-10 * scale.max(f64::MIN_POSITIVE);
        let mut shifted = values.clone();
        for &p in &self.trailing_diag {
            shifted[p] -= delta;
        }
        let sym = SymbolicSparseColMat::new_checked(self.n, self.n, self.col_ptr.clone(), None, self.row_idx.clone());
        let mat = SparseColMatRef::new(sym.as_ref(), &shifted);
        let mut l = vec![0.0; self.symbolic.len_val()];
        let mut mem = MemBuffer::new(self.symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()));
        let regularization = LdltRegularization {
            dynamic_regularization_signs: None,
            dynamic_regularization_delta: 0.0,
            dynamic_regularization_epsilon: 0.0,
        };
        self.symbolic
            .factorize_numeric_ldlt(
                &mut l,
                mat,
                Side::Lower,
                regularization,
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| Error::Solver(format!("LDL^T factorization: {e:?}")))?;
        if l.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("LDL^T factorization produced non-finite values".into()));
        }
        Ok(SaddleFactor {
            pattern: Arc::clone(self),
            values,
            l,
        })
    }

    /// Builds a pattern from full triplets (both triangles, repeats summed) and
    /// factorizes; upper-triangle triplets are ignored.
    pub fn factorize_triplets(n: usize, n_positive: usize, triplets: &[(usize, usize, f64)]) -> Result<SaddleFactor> {
        let lower: Vec<(usize, usize, f64)> = triplets.iter().copied().filter(|(r, c, _)| r >= c).collect();
        let entries: Vec<(usize, usize)> = lower.iter().map(|(r, c, _)| (*r, *c)).collect();
        let (pattern, pos) = Self::from_entries(n, n_positive, &entries)?;
        let mut values = vec![0.0; pattern.nnz()];
        for ((_, _, v), p) in lower.iter().zip(&pos) {
            values[*p] += v;
        }
        Arc::new(pattern).factorize(values)
    }
}

/// Numeric factorization produced by [`SymmetricPattern::factorize`].
pub struct SaddleFactor {
    pattern: Arc<SymmetricPattern>,
    values: Vec<f64>,
    l: Vec<f64>,
}

impl SaddleFactor {
    pub fn n(&self) -> usize {
        self.pattern.n
    }

    /// `y = K x` with the unperturbed matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut y = vec![0.0; p.n];
        for c in 0..p.n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                let r = p.row_idx[k];
                let v = self.values[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    fn solve_perturbed(&self, rhs: &mut [f64]) {
        let p = &self.pattern;
        let f = LdltRef::new(&p.symbolic, &self.l);
        let mut mem = MemBuffer::new(p.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        f.solve_in_place_with_conj(
            Conj::No,
            ColMut::from_slice_mut(rhs).as_mat_mut(),
            Par::Seq,
            MemStack::new(&mut mem),
        );
    }

    /// Solves `K x = rhs` in place; returns the final relative residual.
    pub fn solve_in_place(&self, rhs: &mut [f64]) -> f64 {
        assert_eq!(rhs.len(), self.n());
        let b = rhs.to_vec();
        let bnorm = norm(&b);
        if bnorm == 0.0 {
            rhs.fill(0.0);
            return 0.0;
        }
        self.solve_perturbed(rhs);
        let mut best = f64::INFINITY;
        for _ in 0..20 {
            let kx = self.mul_vec(rhs);
            let mut r: Vec<f64> = b.iter().zip(&kx).map(|(b, k)| b - k).collect();
            let rel = norm(&r) / bnorm;
            if rel >= 0.5 * best || rel <= 1e-15 {
                best = best.min(rel);
                break;
            }
            best = rel;
            self.solve_perturbed(&mut r);
            rhs.iter_mut().zip(&r).for_each(|(x, d)| *x += d);
        }
        best
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
