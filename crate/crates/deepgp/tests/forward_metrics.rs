//! Definitional oracles: every metric recomputed from its stated definition
//! with plain loops, the F-score sweep against an exhaustive counting scan,
//! and a mass-conservation identity for the Radon transform.

mod common;

use deepgp::fem::{Boundary, Grid, NodalField};
use deepgp::forward::radon_apply;
use deepgp::metrics::{
    classify_by_row_max, compute_metrics, optimize_fscore_threshold, sobel_intensity,
    uq_classification_maps,
};

/// Deterministic pseudo-random value in (0, 1) (classic trig hash).
fn hash01(k: usize) -> f64 {
    let x = (k as f64 * 12.9898).sin() * 43758.5453;
    x - x.floor()
}

#[test]
fn metrics_match_definitional_reimplementation() {
    let nps = 16;
    let grid = Grid::new(2, nps, Boundary::Neumann).unwrap();
    let n = grid.n_nodes();
    let recon = NodalField::new(grid, (0..n).map(|k| 2.0 * hash01(k) - 0.6).collect()).unwrap();
    let truth =
        NodalField::new(grid, (0..n).map(|k| 1.5 * hash01(k + 7919) - 0.2).collect()).unwrap();

    let report = compute_metrics(&recon, &truth).unwrap();

    let e: Vec<f64> = recon.values.iter().zip(&truth.values).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let l1 = e.iter().map(|v| v.abs()).sum::<f64>() / nf;
    let mse = e.iter().map(|v| v * v).sum::<f64>() / nf;
    let l2 = mse.sqrt();

    // Gradient part of H1: centred differences inside, one-sided at edges.
    let h = grid.h();
    let at = |ix: usize, iy: usize| e[grid.node(ix, iy)];
    let mut gsum = 0.0;
    for iy in 0..nps {
        for ix in 0..nps {
            let gx = if ix == 0 {
                (at(1, iy) - at(0, iy)) / h
            } else if ix == nps - 1 {
                (at(nps - 1, iy) - at(nps - 2, iy)) / h
            } else {
                (at(ix + 1, iy) - at(ix - 1, iy)) / (2.0 * h)
            };
            let gy = if iy == 0 {
                (at(ix, 1) - at(ix, 0)) / h
            } else if iy == nps - 1 {
                (at(ix, nps - 1) - at(ix, nps - 2)) / h
            } else {
                (at(ix, iy + 1) - at(ix, iy - 1)) / (2.0 * h)
            };
            gsum += gx * gx + gy * gy;
        }
    }
    let h1 = l2 + (gsum / nf).sqrt();

    let tmin = truth.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let tmax = truth.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let peak = tmax - tmin;
    let psnr = 10.0 * (peak * peak / mse).log10();

    // SSIM: 7x7 uniform window clipped at the border, population statistics,
    // dynamic range over both images jointly.
    let lo = recon
        .values
        .iter()
        .chain(&truth.values)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = recon
        .values
        .iter()
        .chain(&truth.values)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let big_l = hi - lo;
    let c1 = (0.01 * big_l).powi(2);
    let c2 = (0.03 * big_l).powi(2);
    let mut ssim_sum = 0.0;
    for cy in 0..nps as isize {
        for cx in 0..nps as isize {
            let (mut cnt, mut sa, mut sb, mut saa, mut sbb, mut sab) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -3..=3 {
                for dx in -3..=3 {
                    let (ix, iy) = (cx + dx, cy + dy);
                    if ix < 0 || iy < 0 || ix >= nps as isize || iy >= nps as isize {
                        continue;
                    }
                    let idx = grid.node(ix as usize, iy as usize);
                    let (va, vb) = (recon.values[idx], truth.values[idx]);
                    cnt += 1.0;
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (ma, mb) = (sa / cnt, sb / cnt);
            let (va, vb) = (saa / cnt - ma * ma, sbb / cnt - mb * mb);
            let cov = sab / cnt - ma * mb;
            ssim_sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    let ssim = ssim_sum / nf;

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    assert!(close(report.l1, l1), "l1 {} vs {}", report.l1, l1);
    assert!(close(report.l2, l2), "l2 {} vs {}", report.l2, l2);
    assert!(close(report.h1, h1), "h1 {} vs {}", report.h1, h1);
    assert!(close(report.psnr, psnr), "psnr {} vs {}", report.psnr, psnr);
    assert!(close(report.ssim, ssim), "ssim {} vs {}", report.ssim, ssim);
}

/// Integral over every projection equals the image mass: Σ_j h·R(θ, t_j) ≈
/// h²·Σ_i f_i for a bump supported away from the boundary.
#[test]
fn radon_projections_conserve_mass() {
    let nps = 33;
    let grid = Grid::new(2, nps, Boundary::Neumann).unwrap();
    let f = NodalField::from_fn(grid, |x, y| {
        (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.02).exp()
    });
    let h = grid.h();
    let mass: f64 = f.values.iter().sum::<f64>() * h * h;

    // 51 offsets cover the whole unit square for every direction (diagonal
    // span √2 ≈ 47 pixels).
    let offsets = 51;
    for theta in [0.0, std::f64::consts::PI / 7.0, 1.0, std::f64::consts::FRAC_PI_2, 2.2] {
        let sino = radon_apply(&f, &[theta], offsets).unwrap();
        let projected: f64 = sino.iter().sum::<f64>() * h;
        assert!(
            (projected - mass).abs() <= 0.01 * mass,
            "theta {theta}: projected mass {projected:.6} vs image mass {mass:.6}"
        );
    }
}

#[test]
fn fscore_sweep_matches_exhaustive_scan() {
    let nps = 12;
    let grid = Grid::new(2, nps, Boundary::Neumann).unwrap();
    let n = grid.n_nodes();
    let intensity = NodalField::new(grid, (0..n).map(|k| hash01(k + 131)).collect()).unwrap();
    // Truth: vertical band of edge pixels (+1) two columns wide.
    let truth = NodalField::from_fn(grid, |x, _| {
        if (0.38..=0.55).contains(&x) {
            1.0
        } else {
            -1.0
        }
    });

    // Thickness 1 keeps the truth untouched inside the sweep, so a plain
    // counting scan over every candidate threshold is a complete oracle.
    let report = optimize_fscore_threshold(&intensity, &truth, 1).unwrap();

    let mut best: Option<(f64, f64, f64)> = None; // (f, threshold, error)
    let mut candidates: Vec<f64> = intensity.values.clone();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    for &t in &candidates {
        let (mut tp, mut fp, mut fnn, mut wrong) = (0.0, 0.0, 0.0, 0usize);
        for i in 0..n {
            let predicted = intensity.values[i] > t;
            let actual = truth.values[i] > 0.0;
            match (predicted, actual) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                (false, false) => {}
            }
            if predicted != actual {
                wrong += 1;
            }
        }
        let f = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) };
        let better = match best {
            None => true,
            // Strictly better F wins; on ties the scan keeps the smaller
            // threshold it met first (candidates are ascending).
            Some((bf, _, _)) => f > bf,
        };
        if better {
            best = Some((f, t, wrong as f64 / n as f64));
        }
    }
    let (bf, bt, berr) = best.unwrap();
    assert_eq!(report.f_score, bf, "best F-score");
    assert_eq!(report.chosen_threshold, bt, "chosen threshold");
    assert_eq!(report.classification_error, berr, "classification error at optimum");
}

#[test]
fn sobel_rotation_transposes_intensity() {
    let nps = 9;
    let grid = Grid::new(2, nps, Boundary::Neumann).unwrap();
    let n = grid.n_nodes();
    let field = NodalField::new(grid, (0..n).map(|k| hash01(k + 17)).collect()).unwrap();
    // 90° rotation = transpose followed by x-flip; under it gx and gy swap
    // roles so the intensity map rotates along.
    let mut rotated = vec![0.0; n];
    for iy in 0..nps {
        for ix in 0..nps {
            rotated[grid.node(nps - 1 - iy, ix)] = field.values[grid.node(ix, iy)];
        }
    }
    let rotated = NodalField::new(grid, rotated).unwrap();

    let a = sobel_intensity(&field).unwrap();
    let b = sobel_intensity(&rotated).unwrap();
    for iy in 0..nps {
        for ix in 0..nps {
            let va = a.values[grid.node(ix, iy)];
            let vb = b.values[grid.node(nps - 1 - iy, ix)];
            assert!((va - vb).abs() < 1e-12, "rotation equivariance broken at ({ix},{iy})");
        }
    }
}

#[test]
fn uq_maps_match_direct_formulas() {
    let nps = 8;
    let grid = Grid::new(2, nps, Boundary::Neumann).unwrap();
    let n = grid.n_nodes();
    let samples: Vec<NodalField> = (0..5)
        .map(|s| {
            NodalField::new(
                grid,
                (0..n).map(|k| if hash01(97 * s + k) > 0.4 { 1.0 } else { -1.0 }).collect(),
            )
            .unwrap()
        })
        .collect();
    let (mean, var) = uq_classification_maps(&samples).unwrap();
    for i in 0..n {
        let vals: Vec<f64> = samples.iter().map(|s| s.values[i]).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        assert!((mean.values[i] - m).abs() < 1e-14);
        assert!((var.values[i] - v).abs() < 1e-14);
    }

    // All samples identical: zero variance everywhere.
    let same = vec![samples[0].clone(), samples[0].clone()];
    let (_, var0) = uq_classification_maps(&same).unwrap();
    assert!(var0.values.iter().all(|v| *v == 0.0));
}

#[test]
fn row_max_classification_matches_naive() {
    let nps = 10;
    let grid = Grid::new(2, nps, Boundary::Neumann).unwrap();
    let n = grid.n_nodes();
    let field = NodalField::new(grid, (0..n).map(|k| hash01(k + 5)).collect()).unwrap();
    let labels = classify_by_row_max(&field).unwrap();
    for iy in 0..nps {
        let mut best = 0;
        for ix in 1..nps {
            if field.values[grid.node(ix, iy)] > field.values[grid.node(best, iy)] {
                best = ix;
            }
        }
        for ix in 0..nps {
            let want = if ix < best { -1.0 } else { 1.0 };
            assert_eq!(labels.values[grid.node(ix, iy)], want, "row {iy}, col {ix}");
        }
    }
}
