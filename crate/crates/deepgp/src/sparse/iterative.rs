//! Matrix-free iterative solvers: conjugate gradients and LSQR.
//!
//! LSQR follows Paige & Saunders (Golub-Kahan bidiagonalisation with QR by
//! Givens rotations) and stops on rule S1 (compatible systems) or S2
//! (incompatible systems, ||A'r|| <= tol * ||A|| * ||r||), whichever fires
//! first, both with parameter `tol`.
//!
//! The optional preconditioner is the action of an SPD matrix P approximating
//! inv(A'A). The substitution x = P^{1/2} z is carried without any square
//! root: alongside the data-space vector u we keep s_k and w_k = P s_k with
//! v_k = P^{1/2} s_k, so every P^{1/2} collapses into plain P applications and
//! inner products. Convergence is then governed by eig(P A'A), and the
//! returned solution is in the original variable.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot, norm2, scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Converged under S1 or S2 with the requested tolerance.
    Tolerance,
    MaxIter,
    /// CG only: encountered a direction with non-positive curvature.
    Breakdown,
}

#[derive(Debug, Clone, Copy)]
pub struct IterSolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub stop: StopReason,
}

/// Conjugate gradients for SPD systems, relative-residual stopping on ||b||.
pub fn cg_solve(
    n: usize,
    apply_a: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, IterSolveReport)> {
    if b.len() != n {
        return Err(Error::Dimension("cg: rhs length".into()));
    }
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, IterSolveReport { iterations: 0, final_residual: 0.0, stop: StopReason::Tolerance }));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rsq = dot(&r, &r);
    for it in 0..max_iter {
        if rsq.sqrt() <= tol * bnorm {
            return Ok((x, IterSolveReport { iterations: it, final_residual: rsq.sqrt() / bnorm, stop: StopReason::Tolerance }));
        }
        apply_a(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Ok((x, IterSolveReport { iterations: it, final_residual: rsq.sqrt() / bnorm, stop: StopReason::Breakdown }));
        }
        let alpha = rsq / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rsq_new = dot(&r, &r);
        let beta = rsq_new / rsq;
        rsq = rsq_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    let res = rsq.sqrt() / bnorm;
    if !res.is_finite() {
        return Err(Error::NonFinite("cg residual".into()));
    }
    Ok((x, IterSolveReport { iterations: max_iter, final_residual: res, stop: StopReason::MaxIter }))
}

/// Least-squares min ||A x - b|| via LSQR; `m` rows, `n` columns.
///
/// `apply_a(x, y)` sets y = A x; `apply_at(y, x)` sets x = A' y. When
/// `precond` is given it must apply an SPD operator on length-`n` vectors;
/// the iteration then runs in the preconditioned variable and the returned
/// `x` is the unpreconditioned solution.
#[allow(clippy::too_many_arguments)]
pub fn lsqr_solve(
    m: usize,
    n: usize,
    apply_a: impl Fn(&[f64], &mut [f64]),
    apply_at: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
    precond: Option<&dyn Fn(&[f64], &mut [f64])>,
) -> Result<(Vec<f64>, IterSolveReport)> {
    if b.len() != m {
        return Err(Error::Dimension("lsqr: rhs length".into()));
    }
    let apply_p = |src: &[f64], dst: &mut [f64]| match precond {
        Some(p) => p(src, dst),
        None => dst.copy_from_slice(src),
    };

    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((x, IterSolveReport { iterations: 0, final_residual: 0.0, stop: StopReason::Tolerance }));
    }

    // beta_1 u_1 = b
    let mut u = b.to_vec();
    let mut beta = bnorm;
    scale(1.0 / beta, &mut u);

    // alpha_1 v_1 = Ahat' u_1, carried as s (g-space) and w = P s (x-space).
    let mut g = vec![0.0; n];
    apply_at(&u, &mut g);
    let mut t = vec![0.0; n];
    apply_p(&g, &mut t);
    let gtg = dot(&g, &t);
    if !(gtg >= 0.0) || !gtg.is_finite() {
        return Err(Error::NonFinite("lsqr: preconditioner produced an indefinite product".into()));
    }
    let mut alpha = gtg.sqrt();
    let mut s = g.clone();
    let mut w = t.clone();
    if alpha > 0.0 {
        scale(1.0 / alpha, &mut s);
        scale(1.0 / alpha, &mut w);
    } else {
        // A' b = 0: x = 0 already minimises.
        return Ok((x, IterSolveReport { iterations: 0, final_residual: 1.0, stop: StopReason::Tolerance }));
    }

    let mut h = w.clone(); // search direction in x-space
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm_sq = alpha * alpha;
    let mut tmp_m = vec![0.0; m];
    let mut cand = vec![0.0; n];

    let mut iterations = max_iter;
    let mut stop = StopReason::MaxIter;
    let mut rnorm = phibar;

    for it in 1..=max_iter {
        // beta_{k+1} u_{k+1} = Ahat v_k - alpha_k u_k, with Ahat v_k = A w_k.
        apply_a(&w, &mut tmp_m);
        for i in 0..m {
            u[i] = tmp_m[i] - alpha * u[i];
        }
        beta = norm2(&u);
        if beta > 0.0 {
            scale(1.0 / beta, &mut u);
        }
        anorm_sq += beta * beta;

        // alpha_{k+1} v_{k+1} = Ahat' u_{k+1} - beta_{k+1} v_k.
        apply_at(&u, &mut g);
        for i in 0..n {
            cand[i] = g[i] - beta * s[i];
        }
        apply_p(&cand, &mut t);
        let quad = dot(&cand, &t).max(0.0);
        alpha = quad.sqrt();
        if alpha > 0.0 {
            for i in 0..n {
                s[i] = cand[i] / alpha;
                w[i] = t[i] / alpha;
            }
        }
        anorm_sq += alpha * alpha;

        // Givens rotation on the lower bidiagonal.
        let rho = rhobar.hypot(beta);
        let cs = rhobar / rho;
        let sn = beta / rho;
        let theta = sn * alpha;
        rhobar = -cs * alpha;
        let phi = cs * phibar;
        phibar *= sn;

        // x,h updates in the original variable.
        let step = phi / rho;
        axpy(step, &h, &mut x);
        let scale_h = theta / rho;
        for i in 0..n {
            h[i] = w[i] - scale_h * h[i];
        }

        rnorm = phibar;
        let arnorm = alpha * (sn * phi).abs();
        let anorm = anorm_sq.sqrt();
        let xnorm = norm2(&x);

        // S2: incompatible-system optimality.
        if anorm > 0.0 && rnorm > 0.0 && arnorm <= tol * anorm * rnorm {
            iterations = it;
            stop = StopReason::Tolerance;
            break;
        }
        // S1: compatible-system residual.
        if rnorm <= tol * bnorm + tol * anorm * xnorm {
            iterations = it;
            stop = StopReason::Tolerance;
            break;
        }
        if rnorm == 0.0 {
            iterations = it;
            stop = StopReason::Tolerance;
            break;
        }
    }

    if !all_finite(&x) {
        return Err(Error::NonFinite("lsqr solution".into()));
    }
    Ok((x, IterSolveReport { iterations, final_residual: rnorm / bnorm, stop }))
}
