//! Synthetic ground-truth images and observation index generators.
//!
//! The reference figures publish pictures, not pixel data, so every geometry
//! here is parameterised explicitly and documented on its constructor; tests
//! and experiments treat these definitions as the ground truth.

use crate::error::{Error, Result};
use crate::fem::{Grid, NodalField};
use rand::Rng;

/// Recognised ground-truth images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthKind {
    SquareCircle,
    CornerSlope,
    Multiscale,
    Step1d,
    StraightEdge,
    ZigzagEdge,
    SheppLogan,
}

impl std::str::FromStr for TruthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "square_circle" => TruthKind::SquareCircle,
            "corner_slope" => TruthKind::CornerSlope,
            "multiscale" => TruthKind::Multiscale,
            "step_1d" => TruthKind::Step1d,
            "straight_edge" => TruthKind::StraightEdge,
            "zigzag_edge" => TruthKind::ZigzagEdge,
            "shepp_logan" => TruthKind::SheppLogan,
            other => return Err(Error::Config(format!("unknown ground-truth kind '{other}'"))),
        })
    }
}

pub fn generate_ground_truth(kind: TruthKind, grid: &Grid) -> Result<NodalField> {
    let want_dim = if kind == TruthKind::Step1d { 1 } else { 2 };
    if grid.dim != want_dim {
        return Err(Error::InvalidArgument(format!(
            "ground truth {kind:?} needs a {want_dim}D grid, got {}D",
            grid.dim
        )));
    }
    Ok(match kind {
        TruthKind::SquareCircle => square_circle(grid),
        TruthKind::CornerSlope => corner_slope(grid),
        TruthKind::Multiscale => multiscale_disks(grid),
        TruthKind::Step1d => step_1d(grid),
        TruthKind::StraightEdge => straight_edge(grid),
        TruthKind::ZigzagEdge => zigzag_edge(grid),
        TruthKind::SheppLogan => shepp_logan(grid),
    })
}

/// Piecewise-constant test image: square [0.15,0.45]x[0.55,0.85] at +1 and
/// disk of radius 0.18 centred on (0.68,0.32) at -1, on a zero background.
pub fn square_circle(grid: &Grid) -> NodalField {
    NodalField::from_fn(*grid, |x, y| {
        if (0.15..=0.45).contains(&x) && (0.55..=0.85).contains(&y) {
            1.0
        } else if (x - 0.68).powi(2) + (y - 0.32).powi(2) <= 0.18 * 0.18 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Mixed-regularity test image: constant 1 on the quadrant x,y <= 0.5 (sharp
/// corner discontinuity along its two edges) and the planar ramp
/// max(x + y - 1, 0) elsewhere.
pub fn corner_slope(grid: &Grid) -> NodalField {
    NodalField::from_fn(
        *grid,
        |x, y| {
            if x <= 0.5 && y <= 0.5 {
                1.0
            } else {
                (x + y - 1.0).max(0.0)
            }
        },
    )
}

/// Unit-value disks at four scales (radii 0.18, 0.09, 0.045, 0.0225) on a
/// zero background.
pub fn multiscale_disks(grid: &Grid) -> NodalField {
    const DISKS: [(f64, f64, f64); 4] =
        [(0.32, 0.68, 0.18), (0.70, 0.66, 0.09), (0.40, 0.30, 0.045), (0.64, 0.34, 0.0225)];
    NodalField::from_fn(*grid, |x, y| {
        for &(cx, cy, r) in &DISKS {
            if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                return 1.0;
            }
        }
        0.0
    })
}

/// 1D signal with two length scales: a unit box on [0.2, 0.45) plus a narrow
/// Gaussian bump of height 0.8 at 0.75 (width 0.06).
pub fn step_1d(grid: &Grid) -> NodalField {
    NodalField::from_fn(*grid, |x, _| {
        let box_part = if (0.2..0.45).contains(&x) { 1.0 } else { 0.0 };
        box_part + 0.8 * (-((x - 0.75) / 0.06).powi(2)).exp()
    })
}

/// Vertical edge: -1 for x < 0.5, +1 for x >= 0.5.
pub fn straight_edge(grid: &Grid) -> NodalField {
    NodalField::from_fn(*grid, |x, _| if x < 0.5 { -1.0 } else { 1.0 })
}

/// Vertical edge whose interface zigzags: boundary at
/// x = 0.5 + 0.08·tri(y/0.25) with tri a unit triangle wave (period 1,
/// range [-1,1], minimum at 0); -1 left of the boundary, +1 right.
pub fn zigzag_edge(grid: &Grid) -> NodalField {
    NodalField::from_fn(*grid, |x, y| {
        let p = (y / 0.25).fract();
        let tri = if p < 0.5 { 4.0 * p - 1.0 } else { 3.0 - 4.0 * p };
        if x < 0.5 + 0.08 * tri {
            -1.0
        } else {
            1.0
        }
    })
}

/// Modified Shepp-Logan head phantom (the high-contrast ellipse table),
/// evaluated analytically on [0,1]^2 via p = 2x - 1.
pub fn shepp_logan(grid: &Grid) -> NodalField {
    // (intensity, semi-axis a, semi-axis b, centre x, centre y, rotation in degrees)
    const ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    NodalField::from_fn(*grid, |x, y| {
        let (px, py) = (2.0 * x - 1.0, 2.0 * y - 1.0);
        let mut v = 0.0;
        for &(a0, ea, eb, cx, cy, deg) in &ELLIPSES {
            let (dx, dy) = (px - cx, py - cy);
            let (s, c) = deg.to_radians().sin_cos();
            let u = c * dx + s * dy;
            let w = -s * dx + c * dy;
            if (u / ea).powi(2) + (w / eb).powi(2) <= 1.0 {
                v += a0;
            }
        }
        v
    })
}

/// Binary edge map of a labelled (piecewise-constant) image: marks every node
/// with a differing 4-neighbour, then dilates by a Chebyshev radius of
/// (thickness-1)/2 rounded down after subtracting the interface's own 2-pixel
/// width — thickness 6 yields a 6-pixel band around each interface.
pub fn edge_map_from_labels(labels: &NodalField, thickness: usize) -> Result<NodalField> {
    let grid = labels.grid;
    if grid.dim != 2 {
        return Err(Error::InvalidArgument("edge maps require a 2D grid".into()));
    }
    if thickness == 0 {
        return Err(Error::InvalidArgument("edge thickness must be positive".into()));
    }
    let nps = grid.nodes_per_side;
    let differ = |a: f64, b: f64| (a - b).abs() > 1e-9;
    let mut interface = vec![false; grid.n_nodes()];
    for iy in 0..nps {
        for ix in 0..nps {
            let v = labels.values[grid.node(ix, iy)];
            let mut hit = false;
            if ix + 1 < nps && differ(v, labels.values[grid.node(ix + 1, iy)]) {
                hit = true;
            }
            if ix > 0 && differ(v, labels.values[grid.node(ix - 1, iy)]) {
                hit = true;
            }
            if iy + 1 < nps && differ(v, labels.values[grid.node(ix, iy + 1)]) {
                hit = true;
            }
            if iy > 0 && differ(v, labels.values[grid.node(ix, iy - 1)]) {
                hit = true;
            }
            if hit {
                interface[grid.node(ix, iy)] = true;
            }
        }
    }
    let radius = edge_dilation_radius(thickness);
    NodalField::new(grid, dilate_chebyshev(&grid, &interface, radius))
}

/// Dilation radius that widens the 2-pixel interface band to `thickness`
/// pixels; thickness ≤ 2 leaves the band untouched.
pub(crate) fn edge_dilation_radius(thickness: usize) -> usize {
    thickness.saturating_sub(2).div_ceil(2)
}

/// Chebyshev (square-neighbourhood) dilation of a boolean mask on a 2D grid,
/// returned as a 0/1 vector.
pub(crate) fn dilate_chebyshev(grid: &Grid, mask: &[bool], radius: usize) -> Vec<f64> {
    let nps = grid.nodes_per_side;
    let r = radius as isize;
    let mut out = vec![0.0; grid.n_nodes()];
    for iy in 0..nps as isize {
        for ix in 0..nps as isize {
            'scan: for sy in -r..=r {
                for sx in -r..=r {
                    let (jx, jy) = (ix + sx, iy + sy);
                    if jx >= 0
                        && jy >= 0
                        && jx < nps as isize
                        && jy < nps as isize
                        && mask[grid.node(jx as usize, jy as usize)]
                    {
                        out[grid.node(ix as usize, iy as usize)] = 1.0;
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

/// Every stride-th node in each direction (ascending node order). A 128x128
/// grid with stride 4 observes 1024 = 16384/16 nodes.
pub fn lattice_indices(grid: &Grid, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("lattice stride must be positive".into()));
    }
    let nps = grid.nodes_per_side;
    let mut out = Vec::new();
    match grid.dim {
        1 => {
            for ix in (0..nps).step_by(stride) {
                out.push(ix);
            }
        }
        _ => {
            for iy in (0..nps).step_by(stride) {
                for ix in (0..nps).step_by(stride) {
                    out.push(grid.node(ix, iy));
                }
            }
        }
    }
    Ok(out)
}

/// Uniform random subset of `count` distinct nodes, returned in ascending
/// order for reproducible observation layouts.
pub fn random_indices<R: Rng + ?Sized>(
    grid: &Grid,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = grid.n_nodes();
    if count > n {
        return Err(Error::InvalidArgument(format!("cannot draw {count} of {n} nodes")));
    }
    let mut picked = rand::seq::index::sample(rng, n, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Boundary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::str::FromStr;

    fn grid2(nps: usize) -> Grid {
        Grid::new(2, nps, Boundary::Neumann).unwrap()
    }

    #[test]
    fn straight_edge_halves() {
        let g = grid2(64);
        let f = straight_edge(&g);
        for iy in 0..64 {
            assert_eq!(f.values[g.node(31, iy)], -1.0);
            assert_eq!(f.values[g.node(32, iy)], 1.0);
        }
    }

    #[test]
    fn square_circle_values() {
        let g = grid2(128);
        let f = square_circle(&g);
        let at = |x: f64, y: f64| {
            let h = g.h();
            f.values[g.node((x / h).round() as usize, (y / h).round() as usize)]
        };
        assert_eq!(at(0.3, 0.7), 1.0);
        assert_eq!(at(0.68, 0.32), -1.0);
        assert_eq!(at(0.05, 0.05), 0.0);
        assert_eq!(at(0.9, 0.9), 0.0);
    }

    #[test]
    fn corner_slope_values() {
        let g = grid2(101);
        let f = corner_slope(&g);
        let at = |x: f64, y: f64| {
            let h = g.h();
            f.values[g.node((x / h).round() as usize, (y / h).round() as usize)]
        };
        assert_eq!(at(0.25, 0.25), 1.0);
        assert_eq!(at(0.75, 0.10), 0.0);
        assert!((at(0.9, 0.9) - 0.8).abs() <= 1e-12);
    }

    #[test]
    fn zigzag_boundary_position() {
        // At y = 0 the triangle wave sits at its minimum, so the boundary is
        // at x = 0.42.
        let g = grid2(101);
        let f = zigzag_edge(&g);
        assert_eq!(f.values[g.node(40, 0)], -1.0);
        assert_eq!(f.values[g.node(44, 0)], 1.0);
        // Quarter period later (y = 0.125) it reaches the maximum 0.58.
        let iy = 12; // y = 0.12
        assert_eq!(f.values[g.node(55, iy)], -1.0);
        assert!(f.values.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn shepp_logan_key_intensities() {
        let g = grid2(129);
        let f = shepp_logan(&g);
        let at = |x: f64, y: f64| {
            let h = g.h();
            f.values[g.node((x / h).round() as usize, (y / h).round() as usize)]
        };
        // Centre: outer skull (+1) and brain (-0.8) only.
        assert!((at(0.5, 0.5) - 0.2).abs() <= 1e-12);
        // Skull rim: between the two largest ellipses.
        assert!((at(0.84, 0.5) - 1.0).abs() <= 1e-12);
        // Outside the head.
        assert_eq!(at(0.97, 0.5), 0.0);
        assert_eq!(at(0.02, 0.02), 0.0);
    }

    #[test]
    fn step_1d_needs_1d_grid() {
        let g1 = Grid::new(1, 65, Boundary::Neumann).unwrap();
        let f = generate_ground_truth(TruthKind::Step1d, &g1).unwrap();
        assert_eq!(f.len(), 65);
        assert!(generate_ground_truth(TruthKind::Step1d, &grid2(8)).is_err());
        assert!(generate_ground_truth(TruthKind::SquareCircle, &g1).is_err());
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(TruthKind::from_str("nonsense").is_err());
        assert_eq!(TruthKind::from_str("shepp_logan").unwrap(), TruthKind::SheppLogan);
    }

    #[test]
    fn straight_edge_map_thickness_six() {
        let g = grid2(64);
        let truth = straight_edge(&g);
        let edges = edge_map_from_labels(&truth, 6).unwrap();
        // Interface columns 31 and 32 dilated by 2 -> columns 29..=34.
        for iy in 0..64 {
            for ix in 0..64 {
                let expect = (29..=34).contains(&ix);
                assert_eq!(edges.values[g.node(ix, iy)] == 1.0, expect, "({ix},{iy})");
            }
        }
        let count: f64 = edges.values.iter().sum();
        assert_eq!(count, 6.0 * 64.0);
    }

    #[test]
    fn lattice_counts() {
        let g = grid2(128);
        let idx = lattice_indices(&g, 4).unwrap();
        assert_eq!(idx.len(), 1024);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let g1 = Grid::new(1, 9, Boundary::Neumann).unwrap();
        assert_eq!(lattice_indices(&g1, 2).unwrap(), vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn random_indices_unique_and_seeded() {
        let g = grid2(32);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_indices(&g, 20, &mut rng).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&i| i < 1024));
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(a, random_indices(&g, 20, &mut rng2).unwrap());
        assert!(random_indices(&g, 2000, &mut rng).is_err());
    }
}
