//! Sparse LL' Cholesky with AMD fill-reducing ordering.
//!
//! Up-looking factorisation over the elimination tree: row k's pattern comes
//! from an etree reach of the permuted matrix's row k, so symbolic and numeric
//! phases agree by construction. The symbolic phase (ordering, permuted
//! pattern, etree, column pointers) is computed once and reused by
//! `refactor` for matrices with identical pattern and new values — the MCMC
//! hot path refactors twice per proposal.

use super::{amd_order, SparseMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    perm: Vec<usize>,  // perm[k] = original index at permuted position k
    parent: Vec<i64>,
    // Permuted copy of A and the map from source value positions into it.
    a_perm: SparseMatrix,
    value_map: Vec<usize>,
    source_nnz: usize,
    // L in CSC; each column stores its diagonal first, then rows ascending.
    l_colptr: Vec<usize>,
    l_rowind: Vec<usize>,
    l_values: Vec<f64>,
}

impl SparseCholesky {
    /// Factors a symmetric positive definite matrix (full storage).
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::Dimension("cholesky: matrix not square".into()));
        }
        let n = a.n_rows;
        let perm = amd_order(a);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Permuted pattern plus a positional map so refactor can copy values.
        let mut trips: Vec<(usize, usize, usize)> = Vec::with_capacity(a.nnz());
        for r in 0..n {
            for p in a.row_offsets[r]..a.row_offsets[r + 1] {
                trips.push((iperm[r], iperm[a.col_indices[p]], p));
            }
        }
        let mut order: Vec<usize> = (0..trips.len()).collect();
        order.sort_unstable_by_key(|&q| (trips[q].0, trips[q].1));
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(trips.len());
        let mut value_map = vec![0usize; trips.len()];
        for &q in &order {
            let (r, c, src) = trips[q];
            row_offsets[r + 1] += 1;
            value_map[src] = col_indices.len();
            col_indices.push(c);
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let a_perm = SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets,
            col_indices,
            values: vec![0.0; a.nnz()],
        };

        let parent = etree(&a_perm);
        let counts = column_counts(&a_perm, &parent);
        let mut l_colptr = vec![0usize; n + 1];
        for j in 0..n {
            l_colptr[j + 1] = l_colptr[j] + counts[j];
        }
        let lnz = l_colptr[n];

        let mut chol = SparseCholesky {
            n,
            perm,

            parent,
            a_perm,
            value_map,
            source_nnz: a.nnz(),
            l_colptr,
            l_rowind: vec![0usize; lnz],
            l_values: vec![0.0; lnz],
        };
        chol.refactor(a)?;
        Ok(chol)
    }

    /// Numeric refactorisation for a matrix with the same sparsity pattern.
    pub fn refactor(&mut self, a: &SparseMatrix) -> Result<()> {
        if a.n_rows != self.n || a.n_cols != self.n || a.nnz() != self.source_nnz {
            return Err(Error::Dimension("refactor: pattern mismatch".into()));
        }
        for (src, &dst) in self.value_map.iter().enumerate() {
            self.a_perm.values[dst] = a.values[src];
        }
        self.factor_numeric()
    }

    fn factor_numeric(&mut self) -> Result<()> {
        let n = self.n;
        let mut cursor: Vec<usize> = self.l_colptr[..n].to_vec();
        let mut x = vec![0.0f64; n];
        let mut wmark = vec![usize::MAX; n];
        let mut path = vec![0usize; n];
        let mut reach = vec![0usize; n];

        for k in 0..n {
            let top = ereach(&self.a_perm, k, &self.parent, &mut wmark, &mut path, &mut reach);
            // Scatter A_perm[k, 0..=k].
            for p in self.a_perm.row_offsets[k]..self.a_perm.row_offsets[k + 1] {
                let c = self.a_perm.col_indices[p];
                if c <= k {
                    x[c] = self.a_perm.values[p];
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &j in &reach[top..n] {
                let lkj = x[j] / self.l_values[self.l_colptr[j]];
                x[j] = 0.0;
                for p in self.l_colptr[j] + 1..cursor[j] {
                    x[self.l_rowind[p]] -= self.l_values[p] * lkj;
                }
                d -= lkj * lkj;
                let p = cursor[j];
                self.l_rowind[p] = k;
                self.l_values[p] = lkj;
                cursor[j] += 1;
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: self.perm[k], value: d });
            }
            let p = cursor[k];
            debug_assert_eq!(p, self.l_colptr[k]);
            self.l_rowind[p] = k;
            self.l_values[p] = d.sqrt();
            cursor[k] += 1;
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = (0..self.n).map(|k| b[self.perm[k]]).collect();
        self.solve_permuted(&mut x);
        let mut out = vec![0.0; self.n];
        for k in 0..self.n {
            out[self.perm[k]] = x[k];
        }
        out
    }

    fn solve_permuted(&self, x: &mut [f64]) {
        let n = self.n;
        // L z = b
        for j in 0..n {
            let xj = x[j] / self.l_values[self.l_colptr[j]];
            x[j] = xj;
            for p in self.l_colptr[j] + 1..self.l_colptr[j + 1] {
                x[self.l_rowind[p]] -= self.l_values[p] * xj;
            }
        }
        // L' y = z
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in self.l_colptr[j] + 1..self.l_colptr[j + 1] {
                acc -= self.l_values[p] * x[self.l_rowind[p]];
            }
            x[j] = acc / self.l_values[self.l_colptr[j]];
        }
    }

    /// log det A = 2 sum_j log L_jj.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|j| self.l_values[self.l_colptr[j]].ln()).sum::<f64>() * 2.0
    }

    pub fn l_nnz(&self) -> usize {
        self.l_rowind.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ordering(&self) -> &[usize] {
        &self.perm
    }
}

/// Elimination tree of a symmetric matrix (full storage, permuted indexing).
fn etree(a: &SparseMatrix) -> Vec<i64> {
    let n = a.n_rows;
    let mut parent = vec![-1i64; n];
    let mut ancestor = vec![-1i64; n];
    for k in 0..n {
        for p in a.row_offsets[k]..a.row_offsets[k + 1] {
            let mut i = a.col_indices[p];
            if i >= k {
                continue;
            }
            loop {
                let anc = ancestor[i];
                ancestor[i] = k as i64;
                if anc == -1 {
                    if parent[i] == -1 && i != k {
                        parent[i] = k as i64;
                    }
                    break;
                }
                if anc == k as i64 {
                    break;
                }
                i = anc as usize;
            }
        }
    }
    parent
}

/// Pattern of L's row k: columns j < k reachable in the etree from row k's
/// entries. Returns `top`; the pattern is `reach[top..n]` in elimination order.
fn ereach(
    a: &SparseMatrix,
    k: usize,
    parent: &[i64],
    wmark: &mut [usize],
    path: &mut [usize],
    reach: &mut [usize],
) -> usize {
    let n = a.n_rows;
    wmark[k] = k;
    let mut top = n;
    for p in a.row_offsets[k]..a.row_offsets[k + 1] {
        let mut i = a.col_indices[p];
        if i >= k {
            continue;
        }
        let mut len = 0;
        while wmark[i] != k {
            path[len] = i;
            len += 1;
            wmark[i] = k;
            debug_assert!(parent[i] >= 0, "etree path must reach a marked ancestor");
            i = parent[i] as usize;
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            reach[top] = path[len];
        }
    }
    top
}

/// Column counts of L via a symbolic ereach sweep (includes the diagonal).
fn column_counts(a: &SparseMatrix, parent: &[i64]) -> Vec<usize> {
    let n = a.n_rows;
    let mut counts = vec![1usize; n]; // diagonals
    let mut wmark = vec![usize::MAX; n];
    let mut path = vec![0usize; n];
    let mut reach = vec![0usize; n];
    for k in 0..n {
        let top = ereach(a, k, parent, &mut wmark, &mut path, &mut reach);
        for &j in &reach[top..n] {
            counts[j] += 1;
        }
    }
    counts
}
