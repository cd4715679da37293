//! Linear forward operators with exact adjoints.
//!
//! Pixel-mask observation (lattice or random subsampling; the full mask is
//! plain denoising) and a parallel-beam Radon transform built from
//! Joseph-style interpolating line integrals. Apply and adjoint walk the same
//! interpolation stencil, so the adjoint identity holds to roundoff — the
//! property the least-squares posterior solves depend on.

use crate::error::{Error, Result};
use crate::fem::{Grid, NodalField};
use crate::sparse::SparseMatrix;

/// Linear observation operator A: R^n -> R^m with a cached sparse export.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    n_in: usize,
    m_out: usize,
    kind: OperatorKind,
    export: SparseMatrix,
    sparse_gram: bool,
}

#[derive(Debug, Clone)]
enum OperatorKind {
    /// Gather rows: (Ax)_k = x[indices[k]].
    Mask { indices: Vec<usize> },
    /// General row stencils applied as matvecs; transpose cached for the adjoint.
    Matrix { transpose: SparseMatrix },
}

impl ForwardOperator {
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn m_out(&self) -> usize {
        self.m_out
    }

    /// True when AᵀA is diagonal (mask operators), so integer-order posteriors
    /// can keep a sparse precision and use the marginal-likelihood sampler.
    pub fn has_sparse_gram(&self) -> bool {
        self.sparse_gram
    }

    /// Row-stencil export; matches `apply` on any vector to roundoff.
    pub fn sparse_export(&self) -> Option<&SparseMatrix> {
        Some(&self.export)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in {
            return Err(Error::Dimension(format!(
                "operator input length {} expected, got {}",
                self.n_in,
                x.len()
            )));
        }
        Ok(match &self.kind {
            OperatorKind::Mask { indices } => indices.iter().map(|&i| x[i]).collect(),
            OperatorKind::Matrix { .. } => self.export.matvec_par(x),
        })
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.m_out {
            return Err(Error::Dimension(format!(
                "operator adjoint input length {} expected, got {}",
                self.m_out,
                y.len()
            )));
        }
        Ok(match &self.kind {
            OperatorKind::Mask { indices } => {
                let mut out = vec![0.0; self.n_in];
                for (k, &i) in indices.iter().enumerate() {
                    out[i] = y[k];
                }
                out
            }
            OperatorKind::Matrix { transpose } => transpose.matvec_par(y),
        })
    }
}

/// Subsampling observation: gathers the listed nodes. Indices must be unique
/// and in range; the full index set gives the identity (denoising) operator
/// and the empty set a data-free operator (prior-only runs).
pub fn make_mask_operator(grid: &Grid, observed_indices: &[usize]) -> Result<ForwardOperator> {
    let n = grid.n_nodes();
    let mut seen = vec![false; n];
    for &i in observed_indices {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "observed index {i} out of range for {n} nodes"
            )));
        }
        if seen[i] {
            return Err(Error::InvalidArgument(format!("duplicate observed index {i}")));
        }
        seen[i] = true;
    }
    let triplets: Vec<(usize, usize, f64)> =
        observed_indices.iter().enumerate().map(|(k, &i)| (k, i, 1.0)).collect();
    let export = SparseMatrix::from_triplets(observed_indices.len(), n, &triplets)?;
    Ok(ForwardOperator {
        n_in: n,
        m_out: observed_indices.len(),
        kind: OperatorKind::Mask { indices: observed_indices.to_vec() },
        export,
        sparse_gram: true,
    })
}

/// Parallel-beam Radon operator over the given projection angles with
/// `offsets` rays per angle (spacing = pixel spacing, centred on the image).
/// Sinogram layout is angle-major: entry `a * offsets + j`.
pub fn make_radon_operator(grid: &Grid, angles: &[f64], offsets: usize) -> Result<ForwardOperator> {
    let mut triplets = Vec::new();
    for_each_ray_sample(grid, angles, offsets, &mut |ray, node, w| {
        triplets.push((ray, node, w));
    })?;
    let m = angles.len() * offsets;
    let export = SparseMatrix::from_triplets(m, grid.n_nodes(), &triplets)?;
    let transpose = export.transpose();
    Ok(ForwardOperator {
        n_in: grid.n_nodes(),
        m_out: m,
        kind: OperatorKind::Matrix { transpose },
        export,
        sparse_gram: false,
    })
}

/// Operator backed by an explicit sparse row stencil (adjoint = transpose).
/// An all-zero matrix gives the degenerate "no information" forward map.
pub fn make_matrix_operator(a: SparseMatrix, sparse_gram: bool) -> ForwardOperator {
    let transpose = a.transpose();
    ForwardOperator {
        n_in: a.n_cols,
        m_out: a.n_rows,
        kind: OperatorKind::Matrix { transpose },
        export: a,
        sparse_gram,
    }
}

/// Projection angles a·π/n, a = 0..n-1 (uniform on [0, π)).
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|a| a as f64 * std::f64::consts::PI / n as f64).collect()
}

/// Line integrals of the nodal image along parallel rays, one block of
/// `offsets` rays per angle (angle-major output).
pub fn radon_apply(image: &NodalField, angles: &[f64], offsets: usize) -> Result<Vec<f64>> {
    let mut sino = vec![0.0; angles.len() * offsets];
    for_each_ray_sample(&image.grid, angles, offsets, &mut |ray, node, w| {
        sino[ray] += w * image.values[node];
    })?;
    Ok(sino)
}

/// Exact discrete adjoint of [`radon_apply`]: deposits each sinogram entry
/// back onto its ray's interpolation stencil.
pub fn radon_adjoint(
    sinogram: &[f64],
    angles: &[f64],
    grid: &Grid,
    offsets: usize,
) -> Result<NodalField> {
    if sinogram.len() != angles.len() * offsets {
        return Err(Error::Dimension(format!(
            "sinogram length {} does not match {} angles x {} offsets",
            sinogram.len(),
            angles.len(),
            offsets
        )));
    }
    let mut out = vec![0.0; grid.n_nodes()];
    for_each_ray_sample(grid, angles, offsets, &mut |ray, node, w| {
        out[node] += w * sinogram[ray];
    })?;
    NodalField::new(*grid, out)
}

/// Walks the Joseph interpolation stencil of every ray. For each angle the ray
/// direction is (-sin θ, cos θ); marching steps are taken across node rows or
/// columns, whichever axis the ray crosses faster, and each step contributes a
/// two-node linear interpolation weighted by the step length along the ray.
fn for_each_ray_sample(
    grid: &Grid,
    angles: &[f64],
    offsets: usize,
    visit: &mut impl FnMut(usize, usize, f64),
) -> Result<()> {
    if grid.dim != 2 {
        return Err(Error::InvalidArgument("Radon transform requires a 2D grid".into()));
    }
    if offsets == 0 {
        return Err(Error::InvalidArgument("Radon transform requires at least one offset".into()));
    }
    let nps = grid.nodes_per_side;
    let h = grid.h();
    let half = (offsets as f64 - 1.0) / 2.0;
    for (a, &theta) in angles.iter().enumerate() {
        let (sin_t, cos_t) = theta.sin_cos();
        let (dx, dy) = (-sin_t, cos_t);
        for j in 0..offsets {
            let ray = a * offsets + j;
            let t = (j as f64 - half) * h;
            // Point of the ray closest to the image centre.
            let px = 0.5 + t * cos_t;
            let py = 0.5 + t * sin_t;
            if dy.abs() >= dx.abs() {
                let step = h / dy.abs();
                for iy in 0..nps {
                    let s = (iy as f64 * h - py) / dy;
                    let u = (px + s * dx) / h;
                    deposit(grid, u, iy, true, ray, step, visit);
                }
            } else {
                let step = h / dx.abs();
                for ix in 0..nps {
                    let s = (ix as f64 * h - px) / dx;
                    let u = (py + s * dy) / h;
                    deposit(grid, u, ix, false, ray, step, visit);
                }
            }
        }
    }
    Ok(())
}

/// Linear interpolation at fractional lateral coordinate `u` within the fixed
/// row (`march_rows`) or column; out-of-image parts of the stencil are dropped.
fn deposit(
    grid: &Grid,
    u: f64,
    fixed: usize,
    march_rows: bool,
    ray: usize,
    step: f64,
    visit: &mut impl FnMut(usize, usize, f64),
) {
    let nps = grid.nodes_per_side as isize;
    let base = u.floor();
    let frac = u - base;
    let i0 = base as isize;
    let mut emit = |i: isize, w: f64| {
        // Snap tolerance keeps on-axis rays from leaving denormal stencil dust.
        if w > 1e-12 && i >= 0 && i < nps {
            let node = if march_rows {
                grid.node(i as usize, fixed)
            } else {
                grid.node(fixed, i as usize)
            };
            visit(ray, node, w * step);
        }
    };
    emit(i0, 1.0 - frac);
    emit(i0 + 1, frac);
}

/// Normalisation record: original sample mean and (population) standard
/// deviation of the raw observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

/// Observation vector with its i.i.d. noise level Γ = noise_std²·I and, once
/// normalised, the transform needed to undo the rescaling on reconstructions.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub d_obs: Vec<f64>,
    pub noise_std: f64,
    pub normalization: Option<Normalization>,
}

impl ObservationModel {
    pub fn new(d_obs: Vec<f64>, noise_std: f64) -> Result<Self> {
        if !(noise_std > 0.0) || !noise_std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be positive and finite, got {noise_std}"
            )));
        }
        if d_obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation vector".into()));
        }
        Ok(ObservationModel { d_obs, noise_std, normalization: None })
    }

    /// Maps values back to the raw observation scale (identity when the model
    /// was never normalised).
    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        match self.normalization {
            Some(n) => v.iter().map(|&x| x * n.std + n.mean).collect(),
            None => v.to_vec(),
        }
    }
}

/// Centres and rescales the observations to sample mean 0 and standard
/// deviation 1 in place, recording the transform for later inversion.
pub fn normalize_observations(model: &mut ObservationModel) -> Result<()> {
    if model.normalization.is_some() {
        return Err(Error::InvalidArgument("observations already normalised".into()));
    }
    let m = model.d_obs.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalisation needs at least 2 observations, got {m}"
        )));
    }
    let mean = model.d_obs.iter().sum::<f64>() / m as f64;
    let var = model.d_obs.iter().map(|&d| (d - mean) * (d - mean)).sum::<f64>() / m as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::InvalidArgument("constant observations have zero variance".into()));
    }
    if !std.is_finite() {
        return Err(Error::NonFinite("observation standard deviation".into()));
    }
    for d in &mut model.d_obs {
        *d = (*d - mean) / std;
    }
    model.normalization = Some(Normalization { mean, std });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Boundary;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid2(nps: usize) -> Grid {
        Grid::new(2, nps, Boundary::Neumann).unwrap()
    }

    #[test]
    fn full_mask_is_identity() {
        let g = grid2(4);
        let all: Vec<usize> = (0..16).collect();
        let a = make_mask_operator(&g, &all).unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        assert_eq!(a.apply(&x).unwrap(), x);
        assert_eq!(a.apply_transpose(&x).unwrap(), x);
    }

    #[test]
    fn mask_rejects_bad_indices() {
        let g = grid2(3);
        assert!(make_mask_operator(&g, &[0, 0]).is_err());
        assert!(make_mask_operator(&g, &[9]).is_err());
        // Empty mask is a valid data-free operator.
        let a = make_mask_operator(&g, &[]).unwrap();
        assert_eq!(a.m_out(), 0);
        assert!(a.apply(&vec![1.0; 9]).unwrap().is_empty());
    }

    #[test]
    fn mask_gather_scatter_adjoint_and_gram() {
        let g = grid2(5);
        let idx = [3usize, 7, 11, 24, 0];
        let a = make_mask_operator(&g, &idx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..25).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
        let ax = a.apply(&x).unwrap();
        let aty = a.apply_transpose(&y).unwrap();
        let lhs: f64 = ax.iter().zip(&y).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        // Export matches apply.
        let ex = a.sparse_export().unwrap().matvec(&x);
        for (p, q) in ex.iter().zip(&ax) {
            assert!((p - q).abs() <= 1e-12);
        }
        // Gram matrix is diagonal with 0/1 entries, 1 exactly on observed nodes.
        let gram = a.sparse_export().unwrap().transpose().matmul(a.sparse_export().unwrap()).unwrap();
        for r in 0..25 {
            let (cols, vals) = gram.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                assert_eq!(c, r, "off-diagonal Gram entry");
                let expect = if idx.contains(&r) { 1.0 } else { 0.0 };
                assert_eq!(v, expect);
            }
            if idx.contains(&r) {
                assert!(!cols.is_empty());
            }
        }
        assert!(a.has_sparse_gram());
    }

    #[test]
    fn radon_zero_image_zero_sinogram() {
        let g = grid2(16);
        let img = NodalField::constant(g, 0.0);
        let sino = radon_apply(&img, &uniform_angles(8), 16).unwrap();
        assert!(sino.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn radon_axis_aligned_column_sums() {
        // At angle 0 each ray runs along a grid column, so the integral is
        // h times the column sum.
        let g = grid2(9);
        let h = g.h();
        let img = NodalField::from_fn(g, |x, y| x + 2.0 * y);
        let sino = radon_apply(&img, &[0.0], 9).unwrap();
        for j in 0..9 {
            let col_sum: f64 = (0..9).map(|iy| img.values[g.node(j, iy)]).sum();
            assert!(
                (sino[j] - h * col_sum).abs() <= 1e-12 * (1.0 + col_sum.abs()),
                "ray {j}: {} vs {}",
                sino[j],
                h * col_sum
            );
        }
    }

    #[test]
    fn radon_adjoint_identity_random_pairs() {
        let g = grid2(24);
        let angles = uniform_angles(11);
        let offsets = 24;
        let op = make_radon_operator(&g, &angles, offsets).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let x: Vec<f64> = (0..op.n_in()).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..op.m_out()).map(|_| rng.random::<f64>() - 0.5).collect();
            let ax = op.apply(&x).unwrap();
            let aty = op.apply_transpose(&y).unwrap();
            let lhs: f64 = ax.iter().zip(&y).map(|(p, q)| p * q).sum();
            let rhs: f64 = x.iter().zip(&aty).map(|(p, q)| p * q).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn radon_free_functions_match_operator() {
        let g = grid2(12);
        let angles = uniform_angles(5);
        let op = make_radon_operator(&g, &angles, 12).unwrap();
        let img = NodalField::from_fn(g, |x, y| (x - 0.3) * (y + 0.4));
        let s1 = radon_apply(&img, &angles, 12).unwrap();
        let s2 = op.apply(&img.values).unwrap();
        for (p, q) in s1.iter().zip(&s2) {
            assert!((p - q).abs() <= 1e-12);
        }
        let back1 = radon_adjoint(&s1, &angles, &g, 12).unwrap();
        let back2 = op.apply_transpose(&s1).unwrap();
        for (p, q) in back1.values.iter().zip(&back2) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn radon_single_ray_backprojects_onto_stencil() {
        let g = grid2(10);
        let angles = uniform_angles(6);
        let op = make_radon_operator(&g, &angles, 10).unwrap();
        let ray = 3 * 10 + 4;
        let mut e = vec![0.0; op.m_out()];
        e[ray] = 1.0;
        let back = op.apply_transpose(&e).unwrap();
        let (cols, vals) = op.sparse_export().unwrap().row(ray);
        let mut expected = vec![0.0; op.n_in()];
        for (&c, &v) in cols.iter().zip(vals) {
            expected[c] += v;
        }
        assert_eq!(back, expected);
        assert!(cols.len() >= 10, "ray stencil unexpectedly small");
    }

    #[test]
    fn disk_sinogram_matches_chord_length() {
        // Unit-value disk of radius R: projection at offset t is 2·sqrt(R²−t²)
        // for any angle. Checked away from the rim where the nodal indicator
        // is resolved.
        let n = 257;
        let g = grid2(n);
        let r = 0.35;
        let img = NodalField::from_fn(g, |x, y| {
            if (x - 0.5).powi(2) + (y - 0.5).powi(2) <= r * r {
                1.0
            } else {
                0.0
            }
        });
        let angles = [0.0, std::f64::consts::PI / 6.0, std::f64::consts::PI / 4.0, 1.9];
        let sino = radon_apply(&img, &angles, n).unwrap();
        let half = (n as f64 - 1.0) / 2.0;
        let h = g.h();
        let mut profiles: Vec<Vec<f64>> = Vec::new();
        for a in 0..angles.len() {
            let mut prof = Vec::new();
            for j in 0..n {
                let t = (j as f64 - half) * h;
                if t.abs() <= 0.75 * r {
                    let chord = 2.0 * (r * r - t * t).sqrt();
                    let got = sino[a * n + j];
                    assert!(
                        (got - chord).abs() <= 0.02 * chord,
                        "angle {a} offset {t}: {got} vs chord {chord}"
                    );
                    prof.push(got);
                }
            }
            profiles.push(prof);
        }
        // Rotation invariance: profiles agree across angles within 1%.
        for p in &profiles[1..] {
            for (u, v) in profiles[0].iter().zip(p) {
                assert!((u - v).abs() <= 0.01 * u.abs().max(1.0), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn normalize_two_point_example() {
        let mut m = ObservationModel::new(vec![0.0, 2.0], 0.1).unwrap();
        normalize_observations(&mut m).unwrap();
        let n = m.normalization.unwrap();
        assert_eq!(n.mean, 1.0);
        assert_eq!(n.std, 1.0);
        assert_eq!(m.d_obs, vec![-1.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_constant_and_short() {
        let mut c = ObservationModel::new(vec![3.0; 5], 1.0).unwrap();
        assert!(normalize_observations(&mut c).is_err());
        let mut s = ObservationModel::new(vec![1.0], 1.0).unwrap();
        assert!(normalize_observations(&mut s).is_err());
    }

    #[test]
    fn normalize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw: Vec<f64> = (0..64).map(|_| 3.0 * rng.random::<f64>() + 10.0).collect();
        let mut m = ObservationModel::new(raw.clone(), 0.5).unwrap();
        normalize_observations(&mut m).unwrap();
        let mean: f64 = m.d_obs.iter().sum::<f64>() / 64.0;
        let var: f64 = m.d_obs.iter().map(|&d| (d - mean) * (d - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() <= 1e-12);
        assert!((var.sqrt() - 1.0).abs() <= 1e-12);
        let back = m.denormalize(&m.d_obs);
        for (p, q) in back.iter().zip(&raw) {
            assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
        assert!(normalize_observations(&mut m).is_err());
    }

    #[test]
    fn observation_model_rejects_bad_noise() {
        assert!(ObservationModel::new(vec![1.0, 2.0], 0.0).is_err());
        assert!(ObservationModel::new(vec![1.0, 2.0], -1.0).is_err());
        assert!(ObservationModel::new(vec![1.0, f64::NAN], 1.0).is_err());
    }
}
