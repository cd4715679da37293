//! Approximate-minimum-degree ordering on a quotient graph.
//!
//! Classic element-based minimum degree: eliminating a pivot replaces it and its
//! adjacent elements by one new element over the pivot's alive neighbourhood.
//! External degrees are the usual approximate bound
//! d(u) = min(n_left - 1, d_old + |Lp| - 1, |A_u \ Lp| + |Lp \ u| + sum_e |L_e \ Lp|),
//! with |L_e \ Lp| obtained by the one-pass decrement trick. Elements fully
//! covered by the new one are absorbed. Ties break on the lowest node index so
//! the ordering is deterministic.

use super::SparseMatrix;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

pub fn amd_order(a: &SparseMatrix) -> Vec<usize> {
    assert_eq!(a.n_rows, a.n_cols, "amd_order: matrix must be square");
    let n = a.n_rows;
    if n == 0 {
        return Vec::new();
    }

    // Variable adjacency (off-diagonal), element adjacency, element member lists.
    let mut var_adj: Vec<Vec<u32>> = Vec::with_capacity(n);
    for r in 0..n {
        let (cols, _) = a.row(r);
        var_adj.push(cols.iter().filter(|&&c| c != r).map(|&c| c as u32).collect());
    }
    let mut el_adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut elements: Vec<Vec<u32>> = Vec::new();
    let mut elem_alive: Vec<bool> = Vec::new();

    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = var_adj.iter().map(|adj| adj.len()).collect();
    let mut heap: BinaryHeap<Reverse<(usize, u32)>> = (0..n)
        .map(|i| Reverse((degree[i], i as u32)))
        .collect();

    // Stamp-based set membership for L_p, and |L_e \ L_p| working counts.
    let mut mark = vec![0u64; n];
    let mut stamp = 0u64;
    let mut w_count: Vec<i64> = Vec::new();
    let mut w_stamp: Vec<u64> = Vec::new();

    let mut perm = Vec::with_capacity(n);
    let mut lp: Vec<u32> = Vec::new();

    while let Some(Reverse((d, p))) = heap.pop() {
        let p = p as usize;
        if !alive[p] || d != degree[p] {
            continue; // stale heap entry
        }
        alive[p] = false;
        perm.push(p);
        let n_left = n - perm.len();

        // L_p = alive neighbourhood of p through direct edges and elements.
        stamp += 1;
        mark[p] = stamp;
        lp.clear();
        for &v in &var_adj[p] {
            let v = v as usize;
            if alive[v] && mark[v] != stamp {
                mark[v] = stamp;
                lp.push(v as u32);
            }
        }
        for &e in &el_adj[p] {
            let e = e as usize;
            if !elem_alive[e] {
                continue;
            }
            for &v in &elements[e] {
                let v = v as usize;
                if alive[v] && mark[v] != stamp {
                    mark[v] = stamp;
                    lp.push(v as u32);
                }
            }
            elem_alive[e] = false; // absorbed into the new element
        }
        var_adj[p] = Vec::new();
        el_adj[p] = Vec::new();

        if lp.is_empty() {
            continue;
        }

        let ne = elements.len();
        elements.push(lp.clone());
        elem_alive.push(true);
        w_count.push(0);
        w_stamp.push(0);

        // One pass: w_count[e] = |L_e \ L_p| for every element touching L_p.
        for &u in &lp {
            let u = u as usize;
            for &e in &el_adj[u] {
                let e = e as usize;
                if !elem_alive[e] || e == ne {
                    continue;
                }
                if w_stamp[e] != stamp {
                    // Prune dead members so |L_e| counts alive variables only.
                    elements[e].retain(|&v| alive[v as usize]);
                    w_count[e] = elements[e].len() as i64;
                    w_stamp[e] = stamp;
                }
                w_count[e] -= 1;
            }
        }

        for &u in &lp {
            let u = u as usize;
            // Direct edges inside L_p are now represented by the new element.
            var_adj[u].retain(|&v| alive[v as usize] && mark[v as usize] != stamp);
            let mut elem_deg = 0usize;
            let mut kept = Vec::with_capacity(el_adj[u].len() + 1);
            for &e in &el_adj[u] {
                let eu = e as usize;
                if !elem_alive[eu] || eu == ne {
                    continue;
                }
                if w_stamp[eu] == stamp && w_count[eu] <= 0 {
                    elem_alive[eu] = false; // aggressive absorption: L_e subset of L_p
                    continue;
                }
                elem_deg += if w_stamp[eu] == stamp { w_count[eu] as usize } else { elements[eu].len() };
                kept.push(e);
            }
            kept.push(ne as u32);
            el_adj[u] = kept;

            let d_ext = var_adj[u].len() + (lp.len() - 1) + elem_deg;
            let d_new = d_ext
                .min(degree[u] + lp.len() - 1)
                .min(n_left.saturating_sub(1));
            if d_new != degree[u] {
                degree[u] = d_new;
            }
            heap.push(Reverse((degree[u], u as u32)));
        }
    }

    debug_assert_eq!(perm.len(), n);
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_laplacian(side: usize) -> SparseMatrix {
        let n = side * side;
        let mut trips = Vec::new();
        for j in 0..side {
            for i in 0..side {
                let k = j * side + i;
                trips.push((k, k, 4.0));
                if i + 1 < side {
                    trips.push((k, k + 1, -1.0));
                    trips.push((k + 1, k, -1.0));
                }
                if j + 1 < side {
                    trips.push((k, k + side, -1.0));
                    trips.push((k + side, k, -1.0));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &trips).unwrap()
    }

    #[test]
    fn is_a_permutation() {
        let a = grid_laplacian(9);
        let p = amd_order(&a);
        let mut seen = vec![false; a.n_rows];
        for &i in &p {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn deterministic() {
        let a = grid_laplacian(12);
        assert_eq!(amd_order(&a), amd_order(&a));
    }

    #[test]
    fn handles_diagonal_matrix() {
        let a = SparseMatrix::from_diag(&[1.0, 2.0, 3.0, 4.0]);
        let p = amd_order(&a);
        assert_eq!(p.len(), 4);
    }
}
