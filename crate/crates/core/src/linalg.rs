//! Symmetric positive definite solvers for the grid systems.
//!
//! Structured-grid stiffness matrices numbered row by row have a narrow,
//! nearly constant envelope, so a profile (skyline) Cholesky factorization is
//! used throughout. Rows are stored contiguously from their first structural
//! nonzero up to the diagonal.

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Split of global DOFs into free and constrained ones.
#[derive(Clone, Debug)]
pub struct DofMap {
    free_of: Vec<usize>,
    free: Vec<usize>,
    constrained: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl DofMap {
    pub fn new(n_dofs: usize, constrained: &[usize]) -> Self {
        let mut is_con = vec![false; n_dofs];
        for &c in constrained {
            is_con[c] = true;
        }
        let mut free_of = vec![NONE; n_dofs];
        let mut free = Vec::with_capacity(n_dofs);
        for (g, con) in is_con.iter().enumerate() {
            if !con {
                free_of[g] = free.len();
                free.push(g);
            }
        }
        let constrained = (0..n_dofs).filter(|&g| is_con[g]).collect();
        Self {
            free_of,
            free,
            constrained,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.free_of.len()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    #[inline]
    pub fn free_index(&self, global: usize) -> Option<usize> {
        let f = self.free_of[global];
        (f != NONE).then_some(f)
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&g| full[g]).collect()
    }

    /// `full[free] += alpha * reduced`
    pub fn scatter_add(&self, reduced: &[f64], alpha: f64, full: &mut [f64]) {
        for (r, &g) in reduced.iter().zip(&self.free) {
            full[g] += alpha * r;
        }
    }
}

/// Envelope of a symmetric matrix: first structural column of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct SkylinePattern {
    first: Vec<usize>,
    start: Vec<usize>,
    nnz: usize,
}

impl SkylinePattern {
    /// Envelope induced by a set of dense blocks (element DOF lists in reduced
    /// numbering).
    pub fn from_blocks<'a, I>(n: usize, blocks: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut first: Vec<usize> = (0..n).collect();
        for block in blocks {
            if let Some(&lo) = block.iter().min() {
                for &i in block {
                    if lo < first[i] {
                        first[i] = lo;
                    }
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, f) in first.iter().enumerate() {
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self {
            first,
            start,
            nnz: acc,
        }
    }

    pub fn dense(n: usize) -> Self {
        let all: Vec<usize> = (0..n).collect();
        Self::from_blocks(n, std::iter::once(all.as_slice()))
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> Option<usize> {
        let f = self.first[i];
        (j >= f && j <= i).then(|| self.start[i] + j - f)
    }
}

/// Symmetric matrix in skyline storage (lower triangle).
#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    pattern: Arc<SkylinePattern>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    pub fn zeros(pattern: Arc<SkylinePattern>) -> Self {
        let data = vec![0.0; pattern.nnz];
        Self { pattern, data }
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn pattern(&self) -> &Arc<SkylinePattern> {
        &self.pattern
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    ///
    /// Panics if the entry lies outside the envelope.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        let off = self
            .pattern
            .offset(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) outside skyline envelope"));
        self.data[off] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        self.pattern.offset(i, j).map(|o| self.data[o]).unwrap_or(0.0)
    }

    /// Scatter a dense symmetric block. `dofs[a]` is the reduced index of
    /// local row `a` or `None` for constrained DOFs.
    pub fn add_block(&mut self, dofs: &[Option<usize>], block: &[f64]) {
        let n = dofs.len();
        for a in 0..n {
            let Some(i) = dofs[a] else { continue };
            for b in 0..n {
                let Some(j) = dofs[b] else { continue };
                if j <= i {
                    let off = self.pattern.start[i] + j - self.pattern.first[i];
                    self.data[off] += block[a * n + b];
                }
            }
        }
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        for i in 0..self.n() {
            let off = self.pattern.start[i] + i - self.pattern.first[i];
            self.data[off] += shift;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let f = self.pattern.first[i];
            let row = &self.data[self.pattern.start[i]..self.pattern.start[i + 1]];
            // strictly lower part and diagonal
            let diag = row[i - f];
            let lower = &row[..i - f];
            y[i] += dot(lower, &x[f..i]) + diag * x[i];
            let xi = x[i];
            for (k, l) in lower.iter().enumerate() {
                y[f + k] += l * xi;
            }
        }
        y
    }

    /// In-place Cholesky factorization `A = L L^T`.
    pub fn factor(mut self) -> Result<CholeskyFactor, LinalgError> {
        let n = self.n();
        let first = &self.pattern.first;
        let start = &self.pattern.start;
        let data = &mut self.data;
        for i in 0..n {
            let fi = first[i];
            let si = start[i];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let sj = start[j];
                let s = {
                    let ri = &data[si + k0 - fi..si + j - fi];
                    let rj = &data[sj + k0 - fj..sj + j - fj];
                    data[si + j - fi] - dot(ri, rj)
                };
                if j < i {
                    let djj = data[sj + j - fj];
                    data[si + j - fi] = s / djj;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { pivot: i, value: s });
                    }
                    data[si + i - fi] = s.sqrt();
                }
            }
        }
        Ok(CholeskyFactor { l: self })
    }
}

/// Cholesky factor produced by [`SkylineMatrix::factor`].
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: SkylineMatrix,
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.l.n()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let p = &self.l.pattern;
        let data = &self.l.data;
        let n = p.n();
        for i in 0..n {
            let f = p.first[i];
            let row = &data[p.start[i]..p.start[i + 1]];
            let s = b[i] - dot(&row[..i - f], &b[f..i]);
            b[i] = s / row[i - f];
        }
        for i in (0..n).rev() {
            let f = p.first[i];
            let row = &data[p.start[i]..p.start[i + 1]];
            let xi = b[i] / row[i - f];
            b[i] = xi;
            for (k, l) in row[..i - f].iter().enumerate() {
                b[f + k] -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// `sqrt(b^T A^{-1} b)`
    pub fn dual_norm(&self, b: &[f64]) -> f64 {
        let x = self.solve(b);
        dot(b, &x).max(0.0).sqrt()
    }

    /// `log det A`
    pub fn log_det(&self) -> f64 {
        (0..self.n()).map(|i| 2.0 * self.l.get(i, i).ln()).sum()
    }
}

/// Dot product with four independent accumulators; the association order is
/// fixed, so results are reproducible bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let k = 4 * c;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
