//! Dense generalised symmetric eigendecomposition — the O(n^3) oracle behind
//! the discrete eigenfunction method. Capped at n = 4096 to guard against
//! accidental production use.

use super::SparseMatrix;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

pub const DENSE_EIG_CAP: usize = 4096;

/// Solves K v = lambda * diag(m) v for symmetric K and positive diagonal mass.
///
/// Returns eigenvalues ascending and eigenvectors (column j of the second
/// element, stored as `vecs[j]`) normalised to v' diag(m) v = 1.
pub fn dense_symmetric_eig(
    k: &SparseMatrix,
    m_diag: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = k.n_rows;
    if k.n_cols != n || m_diag.len() != n {
        return Err(Error::Dimension("dense_symmetric_eig: shape mismatch".into()));
    }
    if n > DENSE_EIG_CAP {
        return Err(Error::OracleCap(format!(
            "dense_symmetric_eig is an oracle capped at n = {DENSE_EIG_CAP}, got {n}"
        )));
    }
    if m_diag.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidArgument("mass diagonal must be positive".into()));
    }

    // Reduce to the standard problem B = M^{-1/2} K M^{-1/2}.
    let msqrt_inv: Vec<f64> = m_diag.iter().map(|&m| 1.0 / m.sqrt()).collect();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for r in 0..n {
        let (cols, vals) = k.row(r);
        for (c, v) in cols.iter().zip(vals) {
            b[(r, *c)] = v * msqrt_inv[r] * msqrt_inv[*c];
        }
    }
    // Enforce exact symmetry against round-off in the scaling.
    for r in 0..n {
        for c in 0..r {
            let avg = 0.5 * (b[(r, c)] + b[(c, r)]);
            b[(r, c)] = avg;
            b[(c, r)] = avg;
        }
    }

    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());

    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let col = eig.eigenvectors.column(i);
            (0..n).map(|r| col[r] * msqrt_inv[r]).collect()
        })
        .collect();
    Ok((values, vectors))
}
