//! Best uniform rational approximation of z^{-s}, s in (0,1), on a positive
//! spectral interval, and its application to generalised operator pencils.
//!
//! The fit is computed in barycentric form by interpolation at 2k+1 nodes,
//! iteratively rebalanced until the local error extrema equioscillate
//! (BRASIL-style node redistribution). Error is measured *relative* to
//! z^{-s}, i.e. we minimise sup |z^s r(z) - 1|; this is the quantity that
//! controls spectral accuracy uniformly across the operator spectrum, and
//! `max_error` reports exactly this sup. The converged interpolant is
//! converted to partial-fraction form c0 + sum_j c_j/(z - d_j), which is what
//! gets applied to matrices: r(L) b with L = M^{-1} K costs one shifted solve
//! (K - d_j M) x = M b per pole.
//!
//! Fits are performed on the rescaled interval [lo/hi, 1] for conditioning
//! and mapped back, which is exact for the relative error measure.

use crate::error::{Error, Result};
use crate::sparse::{SparseCholesky, SparseMatrix};
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Interval [lambda_lo, lambda_hi] containing the generalised spectrum of
/// (K, M). lambda_lo is the uniform reaction lower bound, lambda_hi an upper
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralInterval {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl SpectralInterval {
    pub fn new(lambda_lo: f64, lambda_hi: f64) -> Result<Self> {
        if !(lambda_lo.is_finite() && lambda_hi.is_finite()) || lambda_lo <= 0.0 || lambda_hi <= lambda_lo {
            return Err(Error::InvalidArgument(format!(
                "spectral interval needs 0 < lo < hi, got [{lambda_lo}, {lambda_hi}]"
            )));
        }
        Ok(SpectralInterval { lambda_lo, lambda_hi })
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.lambda_lo && z <= self.lambda_hi
    }

    /// Relative drift of either endpoint with respect to `self`; used by the
    /// refit policy (refit only past a drift threshold).
    pub fn drift(&self, other: &SpectralInterval) -> f64 {
        let lo = (other.lambda_lo - self.lambda_lo).abs() / self.lambda_lo;
        let hi = (other.lambda_hi - self.lambda_hi).abs() / self.lambda_hi;
        lo.max(hi)
    }
}

/// Rational approximation r(z) = c0 + sum_j residues[j]/(z - poles[j]) of
/// z^{-exponent_s} on `interval`. `max_error = sup_z |z^s r(z) - 1|` over the
/// interval. Poles are real and lie strictly below lambda_lo (below 0 in
/// practice), so every shifted pencil K - d_j M stays positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalApproximation {
    pub exponent_s: f64,
    pub interval: SpectralInterval,
    pub degree_k: usize,
    pub c0: f64,
    pub residues: Vec<f64>,
    pub poles: Vec<f64>,
    pub max_error: f64,
}

impl RationalApproximation {
    /// Partial-fraction evaluation at a scalar z.
    pub fn evaluate(&self, z: f64) -> f64 {
        let mut acc = self.c0;
        for (c, d) in self.residues.iter().zip(&self.poles) {
            acc += c / (z - d);
        }
        acc
    }

    /// Signed relative error z^s r(z) - 1.
    pub fn relative_error_at(&self, z: f64) -> f64 {
        self.evaluate(z) * z.powf(self.exponent_s) - 1.0
    }

    /// Plain-text record (exact f64 round-trip) for reproducibility.
    pub fn to_text_record(&self) -> String {
        let mut s = String::new();
        s.push_str("rational-approximation v1\n");
        s.push_str(&format!("exponent_s {:.17e}\n", self.exponent_s));
        s.push_str(&format!("interval {:.17e} {:.17e}\n", self.interval.lambda_lo, self.interval.lambda_hi));
        s.push_str(&format!("degree {}\n", self.degree_k));
        s.push_str(&format!("max_error {:.17e}\n", self.max_error));
        s.push_str(&format!("c0 {:.17e}\n", self.c0));
        for (d, c) in self.poles.iter().zip(&self.residues) {
            s.push_str(&format!("pole_residue {d:.17e} {c:.17e}\n"));
        }
        s
    }

    pub fn from_text_record(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty rational record".into()))?;
        if header.trim() != "rational-approximation v1" {
            return Err(Error::Parse(format!("unexpected rational record header: {header}")));
        }
        let mut exponent_s = None;
        let mut interval = None;
        let mut degree = None;
        let mut max_error = None;
        let mut c0 = None;
        let mut poles = Vec::new();
        let mut residues = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or("");
            let mut next_f64 = |what: &str| -> Result<f64> {
                it.next()
                    .ok_or_else(|| Error::Parse(format!("missing {what} in rational record")))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad {what}: {e}")))
            };
            match key {
                "exponent_s" => exponent_s = Some(next_f64("exponent_s")?),
                "interval" => {
                    let lo = next_f64("interval lo")?;
                    let hi = next_f64("interval hi")?;
                    interval = Some(SpectralInterval::new(lo, hi)?);
                }
                "degree" => {
                    let d = it
                        .next()
                        .ok_or_else(|| Error::Parse("missing degree".into()))?
                        .parse::<usize>()
                        .map_err(|e| Error::Parse(format!("bad degree: {e}")))?;
                    degree = Some(d);
                }
                "max_error" => max_error = Some(next_f64("max_error")?),
                "c0" => c0 = Some(next_f64("c0")?),
                "pole_residue" => {
                    poles.push(next_f64("pole")?);
                    residues.push(next_f64("residue")?);
                }
                other => return Err(Error::Parse(format!("unknown rational record key: {other}"))),
            }
        }
        let degree_k = degree.ok_or_else(|| Error::Parse("rational record missing degree".into()))?;
        if poles.len() != degree_k {
            return Err(Error::Parse(format!(
                "rational record lists {} poles but degree {}",
                poles.len(),
                degree_k
            )));
        }
        Ok(RationalApproximation {
            exponent_s: exponent_s.ok_or_else(|| Error::Parse("missing exponent_s".into()))?,
            interval: interval.ok_or_else(|| Error::Parse("missing interval".into()))?,
            degree_k,
            c0: c0.ok_or_else(|| Error::Parse("missing c0".into()))?,
            residues,
            poles,
            max_error: max_error.ok_or_else(|| Error::Parse("missing max_error".into()))?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BrasilOptions {
    /// Maximum node-rebalancing sweeps before giving up.
    pub max_sweeps: usize,
    /// Convergence target for max/min - 1 over the local error extrema.
    pub target_deviation: f64,
    /// Exponent of the per-interval length update (gentler = more stable).
    pub step_size: f64,
    /// Coarse samples per subinterval when locating local error maxima.
    pub samples_per_interval: usize,
}

impl Default for BrasilOptions {
    fn default() -> Self {
        BrasilOptions { max_sweeps: 100, target_deviation: 0.02, step_size: 0.15, samples_per_interval: 64 }
    }
}

pub fn brasil_fit(s: f64, interval: &SpectralInterval, k: usize) -> Result<RationalApproximation> {
    brasil_fit_with(s, interval, k, &BrasilOptions::default())
}

pub fn brasil_fit_with(
    s: f64,
    interval: &SpectralInterval,
    k: usize,
    opts: &BrasilOptions,
) -> Result<RationalApproximation> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidArgument(format!("fractional exponent must lie in (0,1), got {s}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("rational degree must be at least 1".into()));
    }

    // Degenerate interval: a constant suffices (error is O(width/lo)).
    if interval.lambda_hi - interval.lambda_lo <= 1e-9 * interval.lambda_lo {
        let mid = (interval.lambda_lo * interval.lambda_hi).sqrt();
        let c0 = mid.powf(-s);
        let e_lo = (c0 * interval.lambda_lo.powf(s) - 1.0).abs();
        let e_hi = (c0 * interval.lambda_hi.powf(s) - 1.0).abs();
        return Ok(RationalApproximation {
            exponent_s: s,
            interval: *interval,
            degree_k: 0,
            c0,
            residues: vec![],
            poles: vec![],
            max_error: e_lo.max(e_hi),
        });
    }

    // Work on [delta, 1]; the relative error profile is scale-invariant.
    let delta = interval.lambda_lo / interval.lambda_hi;
    let n_nodes = 2 * k + 1;

    // Log-spaced initial nodes, strictly interior.
    let mut nodes: Vec<f64> = (1..=n_nodes)
        .map(|i| {
            let t = i as f64 / (n_nodes + 1) as f64;
            (delta.ln() * (1.0 - t)).exp()
        })
        .collect();

    let mut last_deviation = f64::INFINITY;
    for _sweep in 0..opts.max_sweeps {
        let bary = interpolate_rational(&nodes, s)?;

        // Local maxima of the weighted error on each of the 2k+2 gaps.
        let mut breaks = Vec::with_capacity(n_nodes + 2);
        breaks.push(delta);
        breaks.extend_from_slice(&nodes);
        breaks.push(1.0);
        let mut local: Vec<f64> = Vec::with_capacity(n_nodes + 1);
        for gap in breaks.windows(2) {
            let (_, e) = interval_max_abs(&bary, s, gap[0], gap[1], opts.samples_per_interval);
            local.push(e);
        }
        let e_max = local.iter().cloned().fold(0.0_f64, f64::max);
        let e_min = local.iter().cloned().fold(f64::INFINITY, f64::min);
        last_deviation = if e_min > 0.0 { e_max / e_min - 1.0 } else { f64::INFINITY };
        if last_deviation <= opts.target_deviation {
            return finalize_fit(s, interval, k, &bary, delta);
        }

        // Rebalance gap lengths in proportion to (geometric mean / local err)^sigma;
        // intervals carrying more than their share of error shrink.
        let floor = 1e-300;
        let log_mean = local.iter().map(|e| e.max(floor).ln()).sum::<f64>() / local.len() as f64;
        let mut lengths: Vec<f64> = breaks.windows(2).map(|g| g[1] - g[0]).collect();
        for (len, e) in lengths.iter_mut().zip(&local) {
            let factor = ((log_mean - e.max(floor).ln()) * opts.step_size).exp().clamp(0.5, 2.0);
            *len *= factor;
        }
        let total: f64 = lengths.iter().sum();
        let scale = (1.0 - delta) / total;
        let mut pos = delta;
        for (node, len) in nodes.iter_mut().zip(&lengths) {
            pos += len * scale;
            *node = pos;
        }
    }
    Err(Error::NonConvergence(format!(
        "rational fit: equioscillation deviation {last_deviation:.3e} after {} sweeps (target {:.1e})",
        opts.max_sweeps, opts.target_deviation
    )))
}

/// Barycentric interpolant of t^{-s}: support points are the even-indexed
/// nodes, weights from the nullspace of the Loewner matrix built on the
/// odd-indexed nodes.
struct Barycentric {
    support: Vec<f64>,
    fvals: Vec<f64>,
    weights: Vec<f64>,
}

fn interpolate_rational(nodes: &[f64], s: f64) -> Result<Barycentric> {
    let k = (nodes.len() - 1) / 2;
    let support: Vec<f64> = nodes.iter().step_by(2).cloned().collect();
    let secondary: Vec<f64> = nodes.iter().skip(1).step_by(2).cloned().collect();
    debug_assert_eq!(support.len(), k + 1);
    debug_assert_eq!(secondary.len(), k);
    let fvals: Vec<f64> = support.iter().map(|x| x.powf(-s)).collect();
    let gvals: Vec<f64> = secondary.iter().map(|y| y.powf(-s)).collect();

    // Interpolation at the secondary nodes <=> Loewner nullspace.
    // Padded with a zero row so the nullspace direction shows up in V^T.
    let loewner = DMatrix::<f64>::from_fn(k + 1, k + 1, |m, j| {
        if m < k {
            (fvals[j] - gvals[m]) / (support[j] - secondary[m])
        } else {
            0.0
        }
    });
    let svd = loewner.svd(true, true);
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Breakdown("SVD of Loewner matrix failed".into()))?;
    let mut idx = 0;
    for (i, sv) in svd.singular_values.iter().enumerate() {
        if *sv < svd.singular_values[idx] {
            idx = i;
        }
    }
    let weights: Vec<f64> = (0..k + 1).map(|j| v_t[(idx, j)]).collect();
    let wnorm: f64 = weights.iter().map(|w| w.abs()).sum();
    if !(wnorm > 0.0) || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Breakdown("degenerate barycentric weights".into()));
    }
    // Alternating weight signs <=> no poles between support nodes; required
    // for the interpolant to be usable as an approximant on the interval.
    for w in weights.windows(2) {
        if w[0] * w[1] >= 0.0 {
            return Err(Error::Breakdown("barycentric weights do not alternate in sign".into()));
        }
    }
    Ok(Barycentric { support, fvals, weights })
}

fn bary_eval(b: &Barycentric, t: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((x, f), w) in b.support.iter().zip(&b.fvals).zip(&b.weights) {
        if t == *x {
            return *f;
        }
        let q = w / (t - x);
        num += q * f;
        den += q;
    }
    num / den
}

fn weighted_error(b: &Barycentric, s: f64, t: f64) -> f64 {
    bary_eval(b, t) * t.powf(s) - 1.0
}

/// Max of |weighted error| over [lo, hi]: coarse scan plus golden-section
/// refinement around the best bracket.
fn interval_max_abs(b: &Barycentric, s: f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let mut best_t = lo;
    let mut best = weighted_error(b, s, lo).abs();
    let mut best_i = 0usize;
    for i in 1..=n {
        let t = lo + (hi - lo) * i as f64 / n as f64;
        let e = weighted_error(b, s, t).abs();
        if e > best {
            best = e;
            best_t = t;
            best_i = i;
        }
    }
    // Bracket one coarse step either side of the best sample.
    let step = (hi - lo) / n as f64;
    let mut a = (best_t - step).max(lo);
    let mut c = (best_t + step).min(hi);
    let _ = best_i;
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut x1 = c - inv_phi * (c - a);
    let mut x2 = a + inv_phi * (c - a);
    let mut f1 = weighted_error(b, s, x1).abs();
    let mut f2 = weighted_error(b, s, x2).abs();
    for _ in 0..40 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (c - a);
            f2 = weighted_error(b, s, x2).abs();
        } else {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - inv_phi * (c - a);
            f1 = weighted_error(b, s, x1).abs();
        }
    }
    let refined = f1.max(f2);
    if refined > best {
        ((a + c) / 2.0, refined)
    } else {
        (best_t, best)
    }
}

/// Poles, residues and the final error scan; maps from [delta, 1] back to the
/// physical interval.
fn finalize_fit(
    s: f64,
    interval: &SpectralInterval,
    k: usize,
    bary: &Barycentric,
    delta: f64,
) -> Result<RationalApproximation> {
    let poles_t = extract_poles(bary)?;
    for d in &poles_t {
        if !(*d < delta) {
            return Err(Error::Breakdown(format!(
                "rational fit produced pole {d:.6e} not below the spectral interval"
            )));
        }
    }
    // Residues by local expansion: c = num(d)/q'(d) with q the barycentric
    // denominator; c0 is the value at infinity.
    let mut residues_t = Vec::with_capacity(k);
    for d in &poles_t {
        let mut num = 0.0;
        let mut dq = 0.0;
        for ((x, f), w) in bary.support.iter().zip(&bary.fvals).zip(&bary.weights) {
            num += w * f / (d - x);
            dq -= w / ((d - x) * (d - x));
        }
        residues_t.push(num / dq);
    }
    let sum_w: f64 = bary.weights.iter().sum();
    let sum_wf: f64 = bary.weights.iter().zip(&bary.fvals).map(|(w, f)| w * f).sum();
    if sum_w.abs() < 1e-13 * bary.weights.iter().map(|w| w.abs()).sum::<f64>() {
        return Err(Error::Breakdown("barycentric weights sum to zero; degree degenerated".into()));
    }
    let c0_t = sum_wf / sum_w;

    let hi = interval.lambda_hi;
    let approx = RationalApproximation {
        exponent_s: s,
        interval: *interval,
        degree_k: k,
        c0: c0_t * hi.powf(-s),
        residues: residues_t.iter().map(|c| c * hi.powf(1.0 - s)).collect(),
        poles: poles_t.iter().map(|d| d * hi).collect(),
        max_error: 0.0,
    };

    // Consistency of the partial-fraction form against the barycentric one,
    // and the final dense error scan (reported max_error must match a dense
    // grid scan of the form actually applied downstream).
    let n_grid = 4096;
    let mut max_err = 0.0_f64;
    let mut max_pf_dev = 0.0_f64;
    let log_lo = interval.lambda_lo.ln();
    let log_hi = interval.lambda_hi.ln();
    for i in 0..=n_grid {
        let z = (log_lo + (log_hi - log_lo) * i as f64 / n_grid as f64).exp();
        let pf = approx.evaluate(z);
        if !(pf > 0.0) {
            return Err(Error::Breakdown(format!("rational approximant not positive at z = {z:.6e}")));
        }
        let bv = bary_eval(bary, z / hi) * hi.powf(-s);
        max_pf_dev = max_pf_dev.max((pf - bv).abs() / bv.abs());
        max_err = max_err.max((pf * z.powf(s) - 1.0).abs());
    }
    if max_pf_dev > 1e-7 {
        return Err(Error::Breakdown(format!(
            "pole-residue conversion deviates from interpolant by {max_pf_dev:.3e}"
        )));
    }
    // Sharpen the grid sup with golden refinement around the node gaps.
    let mut breaks = vec![delta];
    breaks.extend(bary.support.iter().cloned());
    breaks.push(1.0);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for gap in breaks.windows(2) {
        let (_, e) = interval_max_abs(bary, s, gap[0], gap[1], 128);
        max_err = max_err.max(e);
    }
    Ok(RationalApproximation { max_error: max_err, ..approx })
}

/// Poles of the barycentric interpolant: finite generalised eigenvalues of
/// the arrowhead pencil, deflated to a k x k standard eigenproblem on the
/// orthogonal complement of the weight vector.
fn extract_poles(bary: &Barycentric) -> Result<Vec<f64>> {
    let kp1 = bary.support.len();
    let k = kp1 - 1;
    if k == 0 {
        return Ok(vec![]);
    }
    let w = DVector::<f64>::from_column_slice(&bary.weights);
    // Householder reflector sending w to a multiple of e0; columns 1.. span
    // the complement of w.
    let mut v = w.clone();
    let wn = w.norm();
    v[0] += if w[0] >= 0.0 { wn } else { -wn };
    let vtv = v.dot(&v);
    if vtv == 0.0 {
        return Err(Error::Breakdown("zero weight vector in pole extraction".into()));
    }
    let z = DMatrix::<f64>::from_fn(kp1, k, |i, c| {
        let delta = if i == c + 1 { 1.0 } else { 0.0 };
        delta - 2.0 * v[i] * v[c + 1] / vtv
    });
    // G = Z^T X Z - (Z^T 1)(w^T X Z)/(w^T 1), X = diag(support).
    let mut xz = z.clone();
    for i in 0..kp1 {
        for c in 0..k {
            xz[(i, c)] *= bary.support[i];
        }
    }
    let ztxz = z.transpose() * &xz;
    let ones = DVector::<f64>::from_element(kp1, 1.0);
    let zte = z.transpose() * &ones;
    let wtxz = xz.transpose() * &w;
    let sum_w = w.dot(&ones);
    if sum_w.abs() < 1e-13 * bary.weights.iter().map(|x| x.abs()).sum::<f64>() {
        return Err(Error::Breakdown("weights sum to zero; pole count degenerates".into()));
    }
    let g = ztxz - &zte * wtxz.transpose() / sum_w;
    let eigs: DVector<Complex<f64>> = g.complex_eigenvalues();
    let mut poles = Vec::with_capacity(k);
    for ev in eigs.iter() {
        if ev.im.abs() > 1e-8 * (1.0 + ev.re.abs()) {
            return Err(Error::Breakdown(format!(
                "complex pole {:.3e} + {:.3e}i in rational fit",
                ev.re, ev.im
            )));
        }
        poles.push(ev.re);
    }
    poles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(poles)
}

/// Signed local extrema of the relative error over the interval, found on a
/// dense log grid between sign changes. A converged fit exhibits 2k+2 of
/// them with alternating signs and near-equal magnitudes.
pub fn error_extrema(r: &RationalApproximation, n_grid: usize) -> Vec<(f64, f64)> {
    let log_lo = r.interval.lambda_lo.ln();
    let log_hi = r.interval.lambda_hi.ln();
    let zs: Vec<f64> = (0..=n_grid)
        .map(|i| (log_lo + (log_hi - log_lo) * i as f64 / n_grid as f64).exp())
        .collect();
    let es: Vec<f64> = zs.iter().map(|z| r.relative_error_at(*z)).collect();
    let mut extrema = Vec::new();
    let mut seg_start = 0usize;
    let flush = |extrema: &mut Vec<(f64, f64)>, i0: usize, i1: usize| {
        if i1 <= i0 {
            return;
        }
        let mut best = i0;
        for i in i0..=i1 {
            if es[i].abs() > es[best].abs() {
                best = i;
            }
        }
        if es[best].abs() > 0.0 {
            extrema.push((zs[best], es[best]));
        }
    };
    for i in 1..es.len() {
        if es[i].signum() != es[seg_start].signum() {
            flush(&mut extrema, seg_start, i - 1);
            seg_start = i;
        }
    }
    flush(&mut extrema, seg_start, es.len() - 1);
    extrema
}

/// lambda_lo = the uniform reaction lower bound; lambda_hi from power
/// iteration on M^{-1}K with a 1.1 safety factor, falling back to the
/// Gershgorin bound if the iteration stalls.
pub fn estimate_spectral_interval(
    k: &SparseMatrix,
    m_lumped: &[f64],
    f_minus: f64,
) -> Result<SpectralInterval> {
    if k.n_rows != k.n_cols || k.n_rows != m_lumped.len() {
        return Err(Error::Dimension("spectral interval: dimension mismatch".into()));
    }
    if f_minus <= 0.0 || m_lumped.iter().any(|m| *m <= 0.0) {
        return Err(Error::InvalidArgument("spectral interval needs positive mass and lower bound".into()));
    }
    let n = k.n_rows;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x51ee1);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mnorm = |v: &[f64]| -> f64 { v.iter().zip(m_lumped).map(|(a, m)| a * a * m).sum::<f64>().sqrt() };
    let nx = mnorm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut lambda_prev = 0.0;
    let mut estimate = None;
    for it in 0..300 {
        let kx = k.matvec(&x);
        // Rayleigh quotient in the M inner product; x is M-normalised.
        let lambda: f64 = x.iter().zip(&kx).map(|(a, b)| a * b).sum();
        if it >= 20 && (lambda - lambda_prev).abs() <= 1e-5 * lambda.abs() {
            estimate = Some(lambda);
            break;
        }
        lambda_prev = lambda;
        let mut y: Vec<f64> = kx.iter().zip(m_lumped).map(|(v, m)| v / m).collect();
        let ny = mnorm(&y);
        if !(ny > 0.0) {
            break;
        }
        y.iter_mut().for_each(|v| *v /= ny);
        x = y;
    }
    let lambda_hi = match estimate {
        Some(l) if l.is_finite() && l > 0.0 => 1.1 * l,
        _ => gershgorin_upper(k, m_lumped),
    };
    SpectralInterval::new(f_minus, lambda_hi.max(f_minus * (1.0 + 1e-3)))
}

/// max_i sum_j |K_ij| / m_i, a valid upper bound on the generalised spectrum.
pub fn gershgorin_upper(k: &SparseMatrix, m_lumped: &[f64]) -> f64 {
    let mut bound = 0.0_f64;
    for r in 0..k.n_rows {
        let (_, vals) = k.row(r);
        let row_sum: f64 = vals.iter().map(|v| v.abs()).sum();
        bound = bound.max(row_sum / m_lumped[r]);
    }
    bound
}

/// r(L) b for L = M^{-1}K: c0 b + sum_j c_j x_j with (K - d_j M) x_j = M b.
/// Factorisations are rebuilt per call (pattern shared across poles); hot
/// paths cache them at a higher level.
pub fn apply_rational(
    r: &RationalApproximation,
    k_mat: &SparseMatrix,
    m_lumped: &[f64],
    b: &[f64],
) -> Result<Vec<f64>> {
    let n = k_mat.n_rows;
    if k_mat.n_cols != n || m_lumped.len() != n || b.len() != n {
        return Err(Error::Dimension("apply_rational: dimension mismatch".into()));
    }
    let mb: Vec<f64> = m_lumped.iter().zip(b).map(|(m, v)| m * v).collect();
    let mut acc: Vec<f64> = b.iter().map(|v| r.c0 * v).collect();
    let mut chol: Option<SparseCholesky> = None;
    for (d, c) in r.poles.iter().zip(&r.residues) {
        let shift: Vec<f64> = m_lumped.iter().map(|m| -d * m).collect();
        let shifted = k_mat.add_diag(&shift)?;
        match chol.as_mut() {
            None => chol = Some(SparseCholesky::factor(&shifted)?),
            Some(f) => f.refactor(&shifted)?,
        }
        let x = chol.as_ref().unwrap().solve(&mb);
        for (a, xi) in acc.iter_mut().zip(&x) {
            *a += c * xi;
        }
    }
    Ok(acc)
}
