//! Reconstruction quality metrics and edge-detection post-processing.
//!
//! All norms are grid-averaged so values are comparable across resolutions.
//! The H¹ value is the additive combination ‖e‖ + ‖∇e‖ of the averaged L²
//! error and the averaged L² norm of its finite-difference gradient (centred
//! in the interior, one-sided at the boundary). PSNR uses the truth's
//! max−min as the peak and is capped at ±999 dB. SSIM uses a 7×7 uniform
//! window with K1 = 0.01, K2 = 0.03; its dynamic range is taken over both
//! images jointly, which equals the truth's range whenever the
//! reconstruction stays inside it and keeps the index exactly symmetric.

use crate::error::{Error, Result};
use crate::fem::NodalField;
use crate::par;
use crate::synthetic::{dilate_chebyshev, edge_dilation_radius};

/// Sentinel for infinite (identical images) or undefined PSNR.
pub const PSNR_CAP: f64 = 999.0;
/// SSIM window half-width (7×7 window).
const SSIM_HALF: isize = 3;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub l1: f64,
    pub l2: f64,
    pub h1: f64,
    /// Decibels, peak = max−min of the truth, capped at ±999.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeReport {
    /// Fraction of misclassified pixels at the chosen threshold.
    pub classification_error: f64,
    pub f_score: f64,
    pub chosen_threshold: f64,
}

pub fn compute_metrics(recon: &NodalField, truth: &NodalField) -> Result<MetricReport> {
    if recon.grid != truth.grid {
        return Err(Error::Dimension("metric inputs live on different grids".into()));
    }
    let n = recon.len() as f64;
    let err: Vec<f64> =
        recon.values.iter().zip(&truth.values).map(|(r, t)| r - t).collect();

    let l1 = err.iter().map(|e| e.abs()).sum::<f64>() / n;
    let mse = err.iter().map(|e| e * e).sum::<f64>() / n;
    let l2 = mse.sqrt();
    let h1 = l2 + gradient_l2(&NodalField::new(recon.grid, err)?);

    let peak = range(&truth.values);
    let psnr = if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (peak * peak / mse).log10()).clamp(-PSNR_CAP, PSNR_CAP)
    };

    let ssim = ssim_uniform(recon, truth);
    Ok(MetricReport { l1, l2, h1, psnr, ssim })
}

fn range(v: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    hi - lo
}

/// Grid-averaged L² norm of the finite-difference gradient: centred
/// differences in the interior, one-sided at the boundary.
fn gradient_l2(e: &NodalField) -> f64 {
    let grid = e.grid;
    let nps = grid.nodes_per_side;
    let h = grid.h();
    let diff = |lo: f64, hi: f64, span: f64| (hi - lo) / (span * h);
    let mut sum = 0.0;
    match grid.dim {
        1 => {
            for i in 0..nps {
                let g = if i == 0 {
                    diff(e.values[0], e.values[1], 1.0)
                } else if i == nps - 1 {
                    diff(e.values[nps - 2], e.values[nps - 1], 1.0)
                } else {
                    diff(e.values[i - 1], e.values[i + 1], 2.0)
                };
                sum += g * g;
            }
        }
        _ => {
            let at = |ix: usize, iy: usize| e.values[grid.node(ix, iy)];
            for iy in 0..nps {
                for ix in 0..nps {
                    let gx = if ix == 0 {
                        diff(at(0, iy), at(1, iy), 1.0)
                    } else if ix == nps - 1 {
                        diff(at(nps - 2, iy), at(nps - 1, iy), 1.0)
                    } else {
                        diff(at(ix - 1, iy), at(ix + 1, iy), 2.0)
                    };
                    let gy = if iy == 0 {
                        diff(at(ix, 0), at(ix, 1), 1.0)
                    } else if iy == nps - 1 {
                        diff(at(ix, nps - 2), at(ix, nps - 1), 1.0)
                    } else {
                        diff(at(ix, iy - 1), at(ix, iy + 1), 2.0)
                    };
                    sum += gx * gx + gy * gy;
                }
            }
        }
    }
    (sum / e.len() as f64).sqrt()
}

/// Mean SSIM with a uniform 7-wide window clipped at the boundary (every
/// pixel contributes a window, shortened windows near edges). Statistics use
/// the population convention over the window.
fn ssim_uniform(a: &NodalField, b: &NodalField) -> f64 {
    let grid = a.grid;
    let l = {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in a.values.iter().chain(&b.values) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        hi - lo
    };
    if l == 0.0 {
        // Both images constant: identical → 1, otherwise no structure to
        // compare.
        return if a.values == b.values { 1.0 } else { 0.0 };
    }
    let c1 = (SSIM_K1 * l) * (SSIM_K1 * l);
    let c2 = (SSIM_K2 * l) * (SSIM_K2 * l);
    let nps = grid.nodes_per_side as isize;

    let window_ssim = |k: usize| {
        let (cx, cy) = match grid.dim {
            1 => (k as isize, 0),
            _ => ((k % grid.nodes_per_side) as isize, (k / grid.nodes_per_side) as isize),
        };
        let y_range = if grid.dim == 1 { 0..=0 } else { -SSIM_HALF..=SSIM_HALF };
        let mut count = 0.0;
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for dy in y_range {
            let iy = cy + dy;
            if iy < 0 || iy >= nps {
                continue;
            }
            for dx in -SSIM_HALF..=SSIM_HALF {
                let ix = cx + dx;
                if ix < 0 || ix >= nps {
                    continue;
                }
                let idx = match grid.dim {
                    1 => ix as usize,
                    _ => grid.node(ix as usize, iy as usize),
                };
                let (va, vb) = (a.values[idx], b.values[idx]);
                count += 1.0;
                sa += va;
                sb += vb;
                saa += va * va;
                sbb += vb * vb;
                sab += va * vb;
            }
        }
        let (ma, mb) = (sa / count, sb / count);
        let va = saa / count - ma * ma;
        let vb = sbb / count - mb * mb;
        let cov = sab / count - ma * mb;
        ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    };
    let map = par::map_indexed(grid.n_nodes(), window_ssim);
    map.iter().sum::<f64>() / map.len() as f64
}

/// Gradient-magnitude map from the standard 3×3 Sobel kernels with replicate
/// padding. Kernels keep their raw integer weights (no 1/8 normalisation), so
/// a vertical step of height 2 responds with |gx| = 8.
pub fn sobel_intensity(field: &NodalField) -> Result<NodalField> {
    let grid = field.grid;
    if grid.dim != 2 {
        return Err(Error::InvalidArgument("Sobel filtering needs a 2D grid".into()));
    }
    let nps = grid.nodes_per_side as isize;
    let clamp = |i: isize| i.clamp(0, nps - 1) as usize;
    let values = par::map_indexed(grid.n_nodes(), |k| {
        let (cx, cy) = ((k % grid.nodes_per_side) as isize, (k / grid.nodes_per_side) as isize);
        let v = |dx: isize, dy: isize| field.values[grid.node(clamp(cx + dx), clamp(cy + dy))];
        // Kernels written as paired differences so constant regions cancel
        // exactly.
        let gx = (v(1, -1) - v(-1, -1)) + 2.0 * (v(1, 0) - v(-1, 0)) + (v(1, 1) - v(-1, 1));
        let gy = (v(-1, 1) - v(-1, -1)) + 2.0 * (v(0, 1) - v(0, -1)) + (v(1, 1) - v(1, -1));
        (gx * gx + gy * gy).sqrt()
    });
    NodalField::new(grid, values)
}

/// ±1 labels: +1 where the value is ≥ threshold.
pub fn classify_by_threshold(field: &NodalField, threshold: f64) -> NodalField {
    let values = field.values.iter().map(|&v| if v >= threshold { 1.0 } else { -1.0 }).collect();
    NodalField::new(field.grid, values).expect("same grid")
}

/// ±1 labels from the per-row maximum of a (hidden-layer) mean: pixels left
/// of the row's argmax get −1, the argmax and everything right of it +1.
/// Ties break to the lowest column index.
pub fn classify_by_row_max(hidden_mean: &NodalField) -> Result<NodalField> {
    let grid = hidden_mean.grid;
    if grid.dim != 2 {
        return Err(Error::InvalidArgument("row-max classification needs a 2D grid".into()));
    }
    let nps = grid.nodes_per_side;
    let mut values = vec![0.0; grid.n_nodes()];
    for iy in 0..nps {
        let mut best = 0;
        for ix in 1..nps {
            if hidden_mean.values[grid.node(ix, iy)] > hidden_mean.values[grid.node(best, iy)] {
                best = ix;
            }
        }
        for ix in 0..nps {
            values[grid.node(ix, iy)] = if ix < best { -1.0 } else { 1.0 };
        }
    }
    NodalField::new(grid, values)
}

/// Sweeps every unique intensity value as a candidate threshold (predicted
/// edge = intensity strictly above it) against the true edge map rendered at
/// the given thickness, and returns the best F-score with its threshold and
/// pixel classification error. The truth is widened with the same dilation
/// convention the synthetic edge maps use; thickness ≤ 2 keeps it as-is.
/// Ties in F-score resolve to the smallest threshold.
pub fn optimize_fscore_threshold(
    intensity: &NodalField,
    true_edges: &NodalField,
    thickness: usize,
) -> Result<EdgeReport> {
    let grid = intensity.grid;
    if grid != true_edges.grid {
        return Err(Error::Dimension("intensity and edge map grids differ".into()));
    }
    if grid.dim != 2 {
        return Err(Error::InvalidArgument("edge scoring needs a 2D grid".into()));
    }
    let base: Vec<bool> = true_edges.values.iter().map(|&v| v > 0.5).collect();
    if !base.iter().any(|&b| b) {
        return Err(Error::InvalidArgument("true edge map has no edge pixels".into()));
    }
    let rendered = dilate_chebyshev(&grid, &base, edge_dilation_radius(thickness));
    let is_edge: Vec<bool> = rendered.iter().map(|&v| v > 0.5).collect();
    let total_edges = is_edge.iter().filter(|&&b| b).count();
    let n = grid.n_nodes();

    // Descending sweep: pixels become "predicted" as the threshold drops
    // below their value, so TP/FP update incrementally per unique value.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        intensity.values[j].partial_cmp(&intensity.values[i]).expect("finite intensities")
    });
    let mut best: Option<EdgeReport> = None;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut k = 0usize;
    let mut thresholds: Vec<f64> = intensity.values.clone();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite intensities"));
    thresholds.dedup();
    for t in thresholds {
        // Everything strictly above t is predicted; pixels equal to t are not.
        while k < n && intensity.values[order[k]] > t {
            if is_edge[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let fn_ = total_edges - tp;
        let denom = 2 * tp + fp + fn_;
        let f = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        let report = EdgeReport {
            classification_error: (fp + fn_) as f64 / n as f64,
            f_score: f,
            chosen_threshold: t,
        };
        // Strictly-greater keeps the first (largest) threshold per score;
        // `>=` prefers the smallest.
        if best.map_or(true, |b| f >= b.f_score) {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one threshold"))
}

/// Pointwise mean and variance of posterior samples thresholded at zero into
/// ±1 labels. The variance uses the 1/n convention, so two samples that
/// disagree at a pixel give exactly 1 there (for ±1 labels it reduces to
/// 1 − mean²).
pub fn uq_classification_maps(samples: &[NodalField]) -> Result<(NodalField, NodalField)> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "classification uncertainty needs at least two samples".into(),
        ));
    }
    let grid = samples[0].grid;
    for s in samples {
        if s.grid != grid {
            return Err(Error::Dimension("samples live on different grids".into()));
        }
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; grid.n_nodes()];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(&s.values) {
            *m += if v >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let var: Vec<f64> = mean.iter().map(|m| 1.0 - m * m).collect();
    Ok((NodalField::new(grid, mean)?, NodalField::new(grid, var)?))
}
