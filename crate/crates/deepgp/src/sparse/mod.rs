//! Sparse matrix storage (CSR) and the operations the rest of the crate builds on:
//! assembly from triplets, matvec, transpose, sparse products, AMD-ordered LL'
//! factorisation, CG/LSQR, a dense generalised eigensolver oracle, and Matrix
//! Market I/O.

mod amd;
mod cholesky;
mod dense;
mod iterative;
mod market;

pub use amd::amd_order;
pub use cholesky::SparseCholesky;
pub use dense::dense_symmetric_eig;
pub use iterative::{cg_solve, lsqr_solve, IterSolveReport, StopReason};
pub use market::{read_matrix_market, write_matrix_market};

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Within each row, column indices are strictly
/// ascending (no duplicates) and in bounds; enforced by constructors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Dimension(format!(
                    "triplet ({r}, {c}) out of bounds for {n_rows}x{n_cols}"
                )));
            }
        }
        // Counting sort by row, then sort each row by column and merge duplicates.
        let mut row_counts = vec![0usize; n_rows + 1];
        for &(r, _, _) in triplets {
            row_counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            row_counts[i + 1] += row_counts[i];
        }
        let mut entries: Vec<(usize, f64)> = vec![(0, 0.0); triplets.len()];
        let mut next = row_counts.clone();
        for &(r, c, v) in triplets {
            entries[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        for r in 0..n_rows {
            let row = &mut entries[row_counts[r]..row_counts[r + 1]];
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = row[i].1;
                let mut j = i + 1;
                while j < row.len() && row[j].0 == c {
                    v += row[j].1;
                    j += 1;
                }
                col_indices.push(c);
                values.push(v);
                i = j;
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix { n_rows, n_cols, row_offsets, col_indices, values })
    }

    /// Builds directly from raw CSR arrays, validating the invariants.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1
            || col_indices.len() != values.len()
            || *row_offsets.last().unwrap_or(&0) != col_indices.len()
            || row_offsets.first() != Some(&0)
        {
            return Err(Error::Dimension("malformed CSR arrays".into()));
        }
        for r in 0..n_rows {
            if row_offsets[r] > row_offsets[r + 1] {
                return Err(Error::Dimension("row offsets not monotone".into()));
            }
            let row = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Dimension("columns not strictly ascending".into()));
                }
            }
            if let Some(&c) = row.last() {
                if c >= n_cols {
                    return Err(Error::Dimension("column index out of bounds".into()));
                }
            }
        }
        Ok(SparseMatrix { n_rows, n_cols, row_offsets, col_indices, values })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// y = A x
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Row-parallel matvec; bit-identical to `matvec` (one task per output row).
    pub fn matvec_par(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_cols);
        crate::par::map_indexed(self.n_rows, |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(|(c, v)| v * x[*c]).sum()
        })
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.n_cols {
            counts[i + 1] += counts[i];
        }
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts.clone();
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let p = next[*c];
                col_indices[p] = r;
                values[p] = *v;
                next[*c] += 1;
            }
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    /// A + beta * B over the union pattern.
    pub fn add_scaled(&self, beta: f64, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::Dimension("add: shape mismatch".into()));
        }
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..self.n_rows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let (c, v) = if j >= cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    let t = (ca[i], va[i]);
                    i += 1;
                    t
                } else if i >= ca.len() || cb[j] < ca[i] {
                    let t = (cb[j], beta * vb[j]);
                    j += 1;
                    t
                } else {
                    let t = (ca[i], va[i] + beta * vb[j]);
                    i += 1;
                    j += 1;
                    t
                };
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix { n_rows: self.n_rows, n_cols: self.n_cols, row_offsets, col_indices, values })
    }

    /// Adds `diag` to the main diagonal (entries may be structurally absent).
    pub fn add_diag(&self, diag: &[f64]) -> Result<SparseMatrix> {
        if diag.len() != self.n_rows || self.n_rows != self.n_cols {
            return Err(Error::Dimension("add_diag: shape mismatch".into()));
        }
        self.add_scaled(1.0, &SparseMatrix::from_diag(diag))
    }

    /// Sparse product A * B (Gustavson row-by-row).
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n_cols != other.n_rows {
            return Err(Error::Dimension("matmul: inner dimension mismatch".into()));
        }
        let n_rows = self.n_rows;
        let n_cols = other.n_cols;
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        let mut acc = vec![0.0; n_cols];
        let mut mark = vec![usize::MAX; n_cols];
        let mut row_cols: Vec<usize> = Vec::new();
        for r in 0..n_rows {
            row_cols.clear();
            let (ca, va) = self.row(r);
            for (k, v) in ca.iter().zip(va) {
                let (cb, vb) = other.row(*k);
                for (c, w) in cb.iter().zip(vb) {
                    if mark[*c] != r {
                        mark[*c] = r;
                        acc[*c] = 0.0;
                        row_cols.push(*c);
                    }
                    acc[*c] += v * w;
                }
            }
            row_cols.sort_unstable();
            for &c in &row_cols {
                col_indices.push(c);
                values.push(acc[c]);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix { n_rows, n_cols, row_offsets, col_indices, values })
    }

    /// Scales rows in place: A <- diag(d) * A.
    pub fn scale_rows(&mut self, d: &[f64]) {
        debug_assert_eq!(d.len(), self.n_rows);
        for r in 0..self.n_rows {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            for v in &mut self.values[lo..hi] {
                *v *= d[r];
            }
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// Exact structural + value symmetry.
    pub fn is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let t = self.transpose();
        t.row_offsets == self.row_offsets
            && t.col_indices == self.col_indices
            && t.values == self.values
    }

    /// (A + A')/2 with exact bitwise symmetry of the result.
    pub fn symmetrize(&self) -> Result<SparseMatrix> {
        if self.n_rows != self.n_cols {
            return Err(Error::Dimension("symmetrize: matrix not square".into()));
        }
        let mut s = self.add_scaled(1.0, &self.transpose())?;
        for v in &mut s.values {
            *v *= 0.5;
        }
        // Mirror the strictly-upper values onto the lower triangle bit-exactly.
        let n = s.n_rows;
        for r in 0..n {
            let (lo, hi) = (s.row_offsets[r], s.row_offsets[r + 1]);
            for p in lo..hi {
                let c = s.col_indices[p];
                if c > r {
                    let v = s.values[p];
                    let (clo, chi) = (s.row_offsets[c], s.row_offsets[c + 1]);
                    if let Ok(q) = s.col_indices[clo..chi].binary_search(&r) {
                        s.values[clo + q] = v;
                    }
                }
            }
        }
        Ok(s)
    }

    /// Symmetric permutation B = P A P' with B[i][j] = A[perm[i]][perm[j]].
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<SparseMatrix> {
        if self.n_rows != self.n_cols || perm.len() != self.n_rows {
            return Err(Error::Dimension("permute: shape mismatch".into()));
        }
        let n = self.n_rows;
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..n {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((iperm[r], iperm[*c], *v));
            }
        }
        SparseMatrix::from_triplets(n, n, &triplets)
    }

    /// Extracts the principal submatrix on `keep` (strictly ascending indices),
    /// relabelling rows/cols by position.
    pub fn principal_submatrix(&self, keep: &[usize]) -> Result<SparseMatrix> {
        if self.n_rows != self.n_cols {
            return Err(Error::Dimension("submatrix: matrix not square".into()));
        }
        let mut new_index = vec![usize::MAX; self.n_cols];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.n_cols {
                return Err(Error::Dimension("submatrix: index out of bounds".into()));
            }
            new_index[old] = new;
        }
        let mut row_offsets = Vec::with_capacity(keep.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &old_r in keep {
            let (cols, vals) = self.row(old_r);
            for (c, v) in cols.iter().zip(vals) {
                if new_index[*c] != usize::MAX {
                    col_indices.push(new_index[*c]);
                    values.push(*v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix { n_rows: keep.len(), n_cols: keep.len(), row_offsets, col_indices, values })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                d[r][*c] = *v;
            }
        }
        d
    }
}
