//! P1 finite elements on structured grids of [0,1] (d=1) and [0,1]^2 (d=2).
//!
//! Nodes coincide with pixels: `nodes_per_side` points per dimension with
//! spacing h = 1/(nodes_per_side - 1), row-major ordering (x fastest). In 2D
//! every grid cell is split into two triangles along the same diagonal
//! ((i,j) -> (i+1,j+1)), which reproduces the 5-point Laplacian stencil for
//! the stiffness matrix and a 7-point stencil for the consistent mass.
//!
//! Homogeneous Neumann conditions are natural (assemble and go); homogeneous
//! Dirichlet conditions are imposed by reduction to interior nodes.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Neumann,
    Dirichlet,
}

/// Structured grid description. d in {1, 2}; at least two nodes per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub nodes_per_side: usize,
    pub boundary: Boundary,
}

impl Grid {
    pub fn new(dim: usize, nodes_per_side: usize, boundary: Boundary) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidArgument(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if nodes_per_side < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 nodes per side".into()));
        }
        Ok(Grid { dim, nodes_per_side, boundary })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_per_side.pow(self.dim as u32)
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.nodes_per_side - 1) as f64
    }

    /// Node index for integer coordinates (x fastest).
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nodes_per_side);
        match self.dim {
            1 => ix,
            _ => iy * self.nodes_per_side + ix,
        }
    }

    /// Physical coordinates of node k.
    pub fn coords(&self, k: usize) -> (f64, f64) {
        let h = self.h();
        match self.dim {
            1 => (k as f64 * h, 0.0),
            _ => {
                let ix = k % self.nodes_per_side;
                let iy = k / self.nodes_per_side;
                (ix as f64 * h, iy as f64 * h)
            }
        }
    }

    pub fn is_boundary_node(&self, k: usize) -> bool {
        let nps = self.nodes_per_side;
        match self.dim {
            1 => k == 0 || k == nps - 1,
            _ => {
                let ix = k % nps;
                let iy = k / nps;
                ix == 0 || iy == 0 || ix == nps - 1 || iy == nps - 1
            }
        }
    }

    /// Degrees of freedom: all nodes for Neumann, interior nodes for Dirichlet
    /// (ascending node indices).
    pub fn dof_nodes(&self) -> Vec<usize> {
        match self.boundary {
            Boundary::Neumann => (0..self.n_nodes()).collect(),
            Boundary::Dirichlet => (0..self.n_nodes()).filter(|&k| !self.is_boundary_node(k)).collect(),
        }
    }
}

/// Nodal coefficient vector tied to a grid; length equals the node count.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::Dimension(format!(
                "nodal field length {} does not match grid with {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        Ok(NodalField { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        NodalField { grid, values: vec![value; grid.n_nodes()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.n_nodes())
            .map(|k| {
                let (x, y) = grid.coords(k);
                f(x, y)
            })
            .collect();
        NodalField { grid, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Consistent P1 mass matrix over all nodes (no boundary treatment; the mass
/// matrix is boundary-condition independent, reductions happen separately).
pub fn assemble_mass(grid: &Grid) -> SparseMatrix {
    let n = grid.n_nodes();
    let h = grid.h();
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();
    match grid.dim {
        1 => {
            // Element mass (h/6) [[2,1],[1,2]].
            for e in 0..grid.nodes_per_side - 1 {
                let (a, b) = (e, e + 1);
                push_sym(&mut trips, a, a, 2.0 * h / 6.0);
                push_sym(&mut trips, b, b, 2.0 * h / 6.0);
                push_sym(&mut trips, a, b, h / 6.0);
            }
        }
        _ => {
            // Triangle mass (area/12) [[2,1,1],[1,2,1],[1,1,2]], area = h^2/2.
            let w = h * h / 2.0 / 12.0;
            for_each_triangle(grid, |tri| {
                for i in 0..3 {
                    for j in i..3 {
                        let v = if i == j { 2.0 * w } else { w };
                        push_sym(&mut trips, tri[i], tri[j], v);
                    }
                }
            });
        }
    }
    build_symmetric(n, &trips)
}

/// Row-sum (lumped) mass diagonal; preserves total mass.
pub fn lump_mass(mass: &SparseMatrix) -> Vec<f64> {
    (0..mass.n_rows)
        .map(|r| {
            let (_, vals) = mass.row(r);
            vals.iter().sum()
        })
        .collect()
}

/// Stiffness plus lumped reaction: K = K_lap + diag(m_lump .* kappa_sq).
///
/// With kappa_sq = 0 this is the pure Neumann Laplacian (zero row sums).
pub fn assemble_stiffness_reaction(grid: &Grid, kappa_sq: &NodalField) -> Result<SparseMatrix> {
    if kappa_sq.grid != *grid {
        return Err(Error::Dimension("kappa_sq field does not match grid".into()));
    }
    if kappa_sq.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("kappa_sq must be finite and non-negative".into()));
    }
    let n = grid.n_nodes();
    let h = grid.h();
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();
    match grid.dim {
        1 => {
            for e in 0..grid.nodes_per_side - 1 {
                let (a, b) = (e, e + 1);
                push_sym(&mut trips, a, a, 1.0 / h);
                push_sym(&mut trips, b, b, 1.0 / h);
                push_sym(&mut trips, a, b, -1.0 / h);
            }
        }
        _ => {
            // P1 gradients on a triangle with vertices p0,p1,p2:
            // K_ij = (b_i b_j + c_i c_j) / (4 A).
            for_each_triangle(grid, |tri| {
                let p: Vec<(f64, f64)> = tri.iter().map(|&k| grid.coords(k)).collect();
                let area2 = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
                let area = 0.5 * area2.abs();
                let b = [p[1].1 - p[2].1, p[2].1 - p[0].1, p[0].1 - p[1].1];
                let c = [p[2].0 - p[1].0, p[0].0 - p[2].0, p[1].0 - p[0].0];
                for i in 0..3 {
                    for j in i..3 {
                        let v = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
                        push_sym(&mut trips, tri[i], tri[j], v);
                    }
                }
            });
        }
    }
    let k_lap = build_symmetric(n, &trips);
    let m_lump = lump_mass(&assemble_mass(grid));
    let reaction: Vec<f64> = m_lump.iter().zip(&kappa_sq.values).map(|(m, k)| m * k).collect();
    k_lap.add_diag(&reaction)
}

/// Reduces a full-node matrix to Dirichlet interior unknowns.
///
/// Returns the reduced matrix and the interior-to-full index map; use
/// [`extend_by_zeros`] to map reduced vectors back to full node vectors.
pub fn apply_dirichlet(a: &SparseMatrix, grid: &Grid) -> Result<(SparseMatrix, Vec<usize>)> {
    if a.n_rows != grid.n_nodes() || a.n_cols != grid.n_nodes() {
        return Err(Error::Dimension("apply_dirichlet: matrix does not match grid".into()));
    }
    let interior: Vec<usize> = (0..grid.n_nodes()).filter(|&k| !grid.is_boundary_node(k)).collect();
    if interior.is_empty() {
        return Err(Error::InvalidArgument("grid has no interior nodes".into()));
    }
    let reduced = a.principal_submatrix(&interior)?;
    Ok((reduced, interior))
}

/// Zero-extends a reduced vector to the full node set.
pub fn extend_by_zeros(reduced: &[f64], index_map: &[usize], n_full: usize) -> Vec<f64> {
    let mut full = vec![0.0; n_full];
    for (v, &k) in reduced.iter().zip(index_map) {
        full[k] = *v;
    }
    full
}

fn push_sym(trips: &mut Vec<(usize, usize, f64)>, i: usize, j: usize, v: f64) {
    // Upper triangle only; mirrored exactly in build_symmetric.
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    trips.push((i, j, v));
}

/// Builds a bitwise-symmetric matrix from upper-triangle triplets.
fn build_symmetric(n: usize, upper: &[(usize, usize, f64)]) -> SparseMatrix {
    let up = SparseMatrix::from_triplets(n, n, upper).expect("assembly indices in bounds");
    let mut full_trips: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * up.nnz());
    for r in 0..n {
        let (cols, vals) = up.row(r);
        for (c, v) in cols.iter().zip(vals) {
            full_trips.push((r, *c, *v));
            if *c != r {
                full_trips.push((*c, r, *v));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &full_trips).expect("assembly indices in bounds")
}

fn for_each_triangle(grid: &Grid, mut f: impl FnMut([usize; 3])) {
    let nps = grid.nodes_per_side;
    for j in 0..nps - 1 {
        for i in 0..nps - 1 {
            let n00 = grid.node(i, j);
            let n10 = grid.node(i + 1, j);
            let n11 = grid.node(i + 1, j + 1);
            let n01 = grid.node(i, j + 1);
            f([n00, n10, n11]);
            f([n00, n11, n01]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mass_1d_three_nodes() {
        let grid = Grid::new(1, 3, Boundary::Neumann).unwrap();
        let m = assemble_mass(&grid);
        let h = 0.5;
        // (h/6) tridiag(1, {2,4,2}, 1)
        assert!((m.get(0, 0) - 2.0 * h / 6.0).abs() < 1e-15);
        assert!((m.get(1, 1) - 4.0 * h / 6.0).abs() < 1e-15);
        assert!((m.get(0, 1) - h / 6.0).abs() < 1e-15);
        assert!((m.get(2, 2) - 2.0 * h / 6.0).abs() < 1e-15);
        let lumped = lump_mass(&m);
        assert!((lumped[0] - h / 2.0).abs() < 1e-15);
        assert!((lumped[1] - h).abs() < 1e-15);
        let total: f64 = lumped.iter().sum();
        assert!((total - 1.0).abs() < 1e-14, "total mass preserved");
    }

    #[test]
    fn stiffness_reaction_1d_example() {
        let grid = Grid::new(1, 3, Boundary::Neumann).unwrap();
        let kappa = NodalField::constant(grid, 1.0);
        let k = assemble_stiffness_reaction(&grid, &kappa).unwrap();
        // (1/h) tridiag(-1, {1,2,1}, -1) + diag(h/2, h, h/2), h = 0.5
        assert!((k.get(0, 0) - (2.0 + 0.25)).abs() < 1e-14);
        assert!((k.get(1, 1) - (4.0 + 0.5)).abs() < 1e-14);
        assert!((k.get(0, 1) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let grid = Grid::new(2, 9, Boundary::Neumann).unwrap();
        let k = assemble_stiffness_reaction(&grid, &NodalField::constant(grid, 0.0)).unwrap();
        for r in 0..grid.n_nodes() {
            let (_, vals) = k.row(r);
            let s: f64 = vals.iter().sum();
            assert!(s.abs() < 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn stiffness_is_five_point_stencil() {
        let grid = Grid::new(2, 5, Boundary::Neumann).unwrap();
        let k = assemble_stiffness_reaction(&grid, &NodalField::constant(grid, 0.0)).unwrap();
        let c = grid.node(2, 2);
        assert!((k.get(c, c) - 4.0).abs() < 1e-12);
        assert!((k.get(c, grid.node(1, 2)) + 1.0).abs() < 1e-12);
        assert!((k.get(c, grid.node(2, 1)) + 1.0).abs() < 1e-12);
        // No diagonal coupling in the Laplacian for this triangulation.
        assert_eq!(k.get(c, grid.node(3, 3)), 0.0);
        // ... but the consistent mass does couple along the cell diagonal.
        let m = assemble_mass(&grid);
        assert!(m.get(c, grid.node(3, 3)) > 0.0);
        assert_eq!(m.get(c, grid.node(1, 3)), 0.0);
    }

    #[test]
    fn mass_2d_row_sums() {
        let grid = Grid::new(2, 7, Boundary::Neumann).unwrap();
        let m = assemble_mass(&grid);
        let h = grid.h();
        let interior = grid.node(3, 3);
        let (_, vals) = m.row(interior);
        let s: f64 = vals.iter().sum();
        assert!((s - h * h).abs() < 1e-14, "interior row sum h^2");
        let total: f64 = lump_mass(&m).iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "total mass = domain measure");
    }

    #[test]
    fn dirichlet_reduction_shapes() {
        let grid = Grid::new(2, 5, Boundary::Dirichlet).unwrap();
        let m = assemble_mass(&grid);
        let (reduced, map) = apply_dirichlet(&m, &grid).unwrap();
        assert_eq!(reduced.n_rows, 9); // 3x3 interior
        assert_eq!(map.len(), 9);
        assert!(map.iter().all(|&k| !grid.is_boundary_node(k)));
        let full = extend_by_zeros(&vec![1.0; 9], &map, grid.n_nodes());
        assert_eq!(full.iter().filter(|&&v| v != 0.0).count(), 9);
        assert_eq!(full[grid.node(0, 0)], 0.0);
        assert_eq!(full[grid.node(1, 1)], 1.0);
    }

    #[test]
    fn constant_is_generalized_eigenvector_with_lumped_mass() {
        // K(kappa^2) * 1 = kappa^2 * M_lump * 1 exactly for constant kappa.
        let grid = Grid::new(2, 8, Boundary::Neumann).unwrap();
        let kappa_sq = 37.5;
        let k = assemble_stiffness_reaction(&grid, &NodalField::constant(grid, kappa_sq)).unwrap();
        let m = lump_mass(&assemble_mass(&grid));
        let ones = vec![1.0; grid.n_nodes()];
        let kv = k.matvec(&ones);
        for i in 0..grid.n_nodes() {
            assert!((kv[i] - kappa_sq * m[i]).abs() < 1e-11);
        }
    }

    proptest! {
        #[test]
        fn assembled_matrices_bitwise_symmetric(nps in 2usize..10, dim in 1usize..3) {
            let grid = Grid::new(dim, nps, Boundary::Neumann).unwrap();
            let m = assemble_mass(&grid);
            prop_assert!(m.is_symmetric());
            let field = NodalField::from_fn(grid, |x, y| 1.0 + x + 3.0 * y);
            let k = assemble_stiffness_reaction(&grid, &field).unwrap();
            prop_assert!(k.is_symmetric());
        }

        #[test]
        fn stiffness_positive_semidefinite(nps in 2usize..8, seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let grid = Grid::new(2, nps, Boundary::Neumann).unwrap();
            let k = assemble_stiffness_reaction(&grid, &NodalField::constant(grid, 0.3)).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..grid.n_nodes()).map(|_| rng.random::<f64>() - 0.5).collect();
            let kx = k.matvec(&x);
            let quad: f64 = x.iter().zip(&kx).map(|(a, b)| a * b).sum();
            prop_assert!(quad >= -1e-12);
        }
    }
}
