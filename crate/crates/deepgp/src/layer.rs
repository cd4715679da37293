//! One Whittle–Matérn SPDE layer: (κ²(x) - Δ)^{α/2} u = η W on the unit
//! domain, discretised with P1 elements and lumped mass.
//!
//! A sample is u = S ξ with ξ standard normal and
//!
//!   S = η̃ · r(L) · L^{-⌊s⌋} · D_κ · C^{-T},   L = M^{-1} K(κ²),  s = α/2,
//!
//! where C = diag(√m) (lumped mass square root), D_κ = diag(κ^ν) evaluated
//! nodally, and r is a rational approximation of z^{-(s-⌊s⌋)} that is present
//! exactly when α/2 is not an integer. Cov(u) = S Sᵀ. The operator caches one
//! Cholesky factorisation of K plus one per rational pole (all sharing the
//! sparsity pattern), so κ² updates in a sampler are plain numeric refactors.

use crate::error::{Error, Result};
use crate::fem::{self, Boundary, Grid, NodalField};
use crate::rational::{
    self, brasil_fit, estimate_spectral_interval, RationalApproximation, SpectralInterval,
};
use crate::sparse::{dense_symmetric_eig, SparseCholesky, SparseMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Matérn field parameters. nu = alpha - dim/2 must be positive; eta_tilde is
/// the κ-independent part of the normalising constant,
/// eta_tilde² = sigma_sq (4π)^{d/2} Γ(ν+d/2)/Γ(ν) = η²/κ^{2ν}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub alpha: f64,
    pub dim: usize,
    pub nu: f64,
    pub sigma_sq: f64,
    pub eta_tilde: f64,
}

impl MaternParams {
    pub fn new(alpha: f64, dim: usize, sigma_sq: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidArgument(format!("dimension must be 1 or 2, got {dim}")));
        }
        let nu = alpha - dim as f64 / 2.0;
        if !(nu > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha = {alpha} must exceed d/2 = {} for a well-defined field",
                dim as f64 / 2.0
            )));
        }
        if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
            return Err(Error::InvalidArgument("marginal variance must be positive".into()));
        }
        let d = dim as f64;
        let eta_tilde = (sigma_sq.ln()
            + (d / 2.0) * (4.0 * std::f64::consts::PI).ln()
            + ln_gamma(nu + d / 2.0)
            - ln_gamma(nu))
        .mul_add(0.5, 0.0)
        .exp();
        Ok(MaternParams { alpha, dim, nu, sigma_sq, eta_tilde })
    }

    /// Fractional operator exponent s = alpha/2.
    pub fn s(&self) -> f64 {
        self.alpha / 2.0
    }

    /// Integer/fractional split of s, snapping to integers within 1e-9.
    pub fn split_s(&self) -> (usize, f64) {
        let s = self.s();
        let rounded = s.round();
        if (s - rounded).abs() < 1e-9 {
            (rounded as usize, 0.0)
        } else {
            let fs = s.floor();
            (fs as usize, s - fs)
        }
    }

    pub fn is_fractional(&self) -> bool {
        self.split_s().1 != 0.0
    }
}

/// η = √(σ² κ^{2ν} (4π)^{d/2} Γ(ν+d/2)/Γ(ν)), the white-noise amplitude that
/// yields marginal variance σ² for the stationary field.
pub fn compute_eta(sigma_sq: f64, kappa: f64, nu: f64, dim: usize) -> Result<f64> {
    if sigma_sq <= 0.0 || kappa <= 0.0 || nu <= 0.0 {
        return Err(Error::InvalidArgument("compute_eta needs positive arguments".into()));
    }
    let d = dim as f64;
    let log_eta_sq = sigma_sq.ln()
        + 2.0 * nu * kappa.ln()
        + (d / 2.0) * (4.0 * std::f64::consts::PI).ln()
        + ln_gamma(nu + d / 2.0)
        - ln_gamma(nu);
    Ok((0.5 * log_eta_sq).exp())
}

/// κ = √(2ν)/ρ and ρ = √(2ν)/κ; the same formula in both directions, so
/// applying it twice returns the input.
pub fn rho_kappa_convert(x: f64, nu: f64) -> Result<f64> {
    if x <= 0.0 || nu <= 0.0 {
        return Err(Error::InvalidArgument("rho/kappa conversion needs positive arguments".into()));
    }
    Ok((2.0 * nu).sqrt() / x)
}

/// Pointwise map from a layer output to the next layer's reaction field:
/// F(z) = min(F_- + a e^{b z}, F_+). Monotone non-decreasing, bounded in
/// [F_-, F_+].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTransform {
    pub f_minus: f64,
    pub f_plus: f64,
    pub a: f64,
    pub b: f64,
}

impl FTransform {
    pub fn new(f_minus: f64, f_plus: f64, a: f64, b: f64) -> Result<Self> {
        if !(f_minus > 0.0) || !(f_plus > f_minus) || !(a > 0.0) || !b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "F transform needs 0 < F_- < F_+ and a > 0, got F_-={f_minus}, F_+={f_plus}, a={a}, b={b}"
            )));
        }
        Ok(FTransform { f_minus, f_plus, a, b })
    }

    pub fn eval(&self, z: f64) -> f64 {
        (self.f_minus + self.a * (self.b * z).exp()).min(self.f_plus)
    }

    /// Rescales F_-, F_+ and a by (2α-2)/6 so correlation lengths stay put
    /// when the smoothness α changes (the reference parameters are for α=4,
    /// where the factor is 1).
    pub fn scaled_for_alpha(&self, alpha: f64) -> Result<FTransform> {
        let factor = (2.0 * alpha - 2.0) / 6.0;
        if !(factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "F rescaling factor (2a-2)/6 must be positive, alpha = {alpha}"
            )));
        }
        FTransform::new(self.f_minus * factor, self.f_plus * factor, self.a * factor, self.b)
    }
}

pub fn scale_f_for_alpha(f: &FTransform, alpha: f64) -> Result<FTransform> {
    f.scaled_for_alpha(alpha)
}

pub fn f_transform(f: &FTransform, u: &NodalField) -> Result<NodalField> {
    if u.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("F transform input contains non-finite values".into()));
    }
    Ok(NodalField { grid: u.grid, values: u.values.iter().map(|z| f.eval(*z)).collect() })
}

/// Discretised spatial white noise w = C^{-T} ξ, i.e. w_i = ξ_i/√m_i with ξ
/// i.i.d. standard normal; then Cov(M w) = M for the lumped mass.
pub fn sample_white_noise<R: Rng + ?Sized>(m_lumped: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if m_lumped.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidArgument("lumped mass must be strictly positive".into()));
    }
    Ok(m_lumped
        .iter()
        .map(|m| {
            let xi: f64 = rng.sample(StandardNormal);
            xi / m.sqrt()
        })
        .collect())
}

/// How the rational factor of a fractional layer is obtained.
#[derive(Debug, Clone, Default)]
pub struct RationalConfig {
    /// Degree of the rational approximation; 0 means the default (3).
    pub degree_k: usize,
    /// Fit on this interval instead of estimating one from the operator.
    pub interval: Option<SpectralInterval>,
    /// Reuse an existing fit when it covers the needed interval (shared
    /// across layers and κ² updates; refit only past the drift threshold).
    pub reuse: Option<RationalApproximation>,
}

impl RationalConfig {
    pub fn with_degree(degree_k: usize) -> Self {
        RationalConfig { degree_k, ..Default::default() }
    }

    fn effective_degree(&self) -> usize {
        if self.degree_k == 0 {
            3
        } else {
            self.degree_k
        }
    }
}

/// Allowed relative slack before a cached rational fit is refit against a
/// drifted spectral interval.
pub const RATIONAL_REFIT_DRIFT: f64 = 0.05;

/// Assembled layer: stiffness-plus-reaction K(κ²), lumped mass, nodal κ^ν
/// scaling, and cached factorisations of K and every shifted pencil K - d_j M.
#[derive(Debug, Clone)]
pub struct LayerOperator {
    grid: Grid,
    params: MaternParams,
    kappa_sq_field: NodalField,
    floor_s: usize,
    rational: Option<RationalApproximation>,
    rational_degree: usize,
    dof_map: Vec<usize>,
    k_mat: SparseMatrix,
    m_lumped: Vec<f64>,
    sqrt_m: Vec<f64>,
    d_kappa: Vec<f64>,
    k_chol: SparseCholesky,
    shift_chols: Vec<SparseCholesky>,
}

pub fn build_layer_operator(
    grid: &Grid,
    params: &MaternParams,
    kappa_sq_field: &NodalField,
    config: &RationalConfig,
) -> Result<LayerOperator> {
    LayerOperator::build(grid, params, kappa_sq_field, config)
}

impl LayerOperator {
    pub fn build(
        grid: &Grid,
        params: &MaternParams,
        kappa_sq_field: &NodalField,
        config: &RationalConfig,
    ) -> Result<Self> {
        if params.dim != grid.dim {
            return Err(Error::Dimension("layer params dimension does not match grid".into()));
        }
        if kappa_sq_field.grid != *grid {
            return Err(Error::Dimension("kappa_sq field grid mismatch".into()));
        }
        if kappa_sq_field.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("kappa_sq field must be strictly positive".into()));
        }

        let k_full = fem::assemble_stiffness_reaction(grid, kappa_sq_field)?;
        let m_full = fem::lump_mass(&fem::assemble_mass(grid));
        let (k_mat, dof_map) = match grid.boundary {
            Boundary::Neumann => (k_full, (0..grid.n_nodes()).collect::<Vec<_>>()),
            Boundary::Dirichlet => fem::apply_dirichlet(&k_full, grid)?,
        };
        let m_lumped: Vec<f64> = dof_map.iter().map(|&i| m_full[i]).collect();
        let sqrt_m: Vec<f64> = m_lumped.iter().map(|m| m.sqrt()).collect();
        let d_kappa: Vec<f64> =
            dof_map.iter().map(|&i| kappa_sq_field.values[i].powf(params.nu / 2.0)).collect();

        let (floor_s, s_frac) = params.split_s();
        let rational = if s_frac == 0.0 {
            None
        } else {
            Some(resolve_rational(config, s_frac, &k_mat, &m_lumped, kappa_sq_field)?)
        };

        let k_chol = SparseCholesky::factor(&k_mat)?;
        let mut shift_chols = Vec::new();
        if let Some(r) = &rational {
            for d in &r.poles {
                let shift: Vec<f64> = m_lumped.iter().map(|m| -d * m).collect();
                let shifted = k_mat.add_diag(&shift)?;
                let mut c = k_chol.clone();
                c.refactor(&shifted)?;
                shift_chols.push(c);
            }
        }

        Ok(LayerOperator {
            grid: *grid,
            params: *params,
            kappa_sq_field: kappa_sq_field.clone(),
            floor_s,
            rational,
            rational_degree: config.effective_degree(),
            dof_map,
            k_mat,
            m_lumped,
            sqrt_m,
            d_kappa,
            k_chol,
            shift_chols,
        })
    }

    /// Swaps in a new reaction field, reusing the symbolic factorisation (the
    /// sparsity pattern is grid-determined) and the rational fit unless the
    /// spectral interval drifted past the refit threshold.
    pub fn update_kappa_sq(&mut self, kappa_sq_field: &NodalField) -> Result<()> {
        if kappa_sq_field.grid != self.grid {
            return Err(Error::Dimension("kappa_sq field grid mismatch".into()));
        }
        if kappa_sq_field.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("kappa_sq field must be strictly positive".into()));
        }
        let k_full = fem::assemble_stiffness_reaction(&self.grid, kappa_sq_field)?;
        let k_mat = match self.grid.boundary {
            Boundary::Neumann => k_full,
            Boundary::Dirichlet => k_full.principal_submatrix(&self.dof_map)?,
        };
        self.k_chol.refactor(&k_mat)?;
        if let Some(r) = &self.rational {
            let lo_needed = kappa_sq_field.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi_needed = rational::gershgorin_upper(&k_mat, &self.m_lumped);
            let covered = r.interval.lambda_lo <= lo_needed * (1.0 + RATIONAL_REFIT_DRIFT)
                && r.interval.lambda_hi * (1.0 + RATIONAL_REFIT_DRIFT) >= hi_needed;
            if !covered {
                let interval = estimate_spectral_interval(&k_mat, &self.m_lumped, lo_needed)?;
                self.rational = Some(brasil_fit(r.exponent_s, &interval, self.rational_degree)?);
            }
            let poles = self.rational.as_ref().unwrap().poles.clone();
            for (c, d) in self.shift_chols.iter_mut().zip(&poles) {
                let shift: Vec<f64> = self.m_lumped.iter().map(|m| -d * m).collect();
                c.refactor(&k_mat.add_diag(&shift)?)?;
            }
        }
        self.d_kappa = self
            .dof_map
            .iter()
            .map(|&i| kappa_sq_field.values[i].powf(self.params.nu / 2.0))
            .collect();
        self.k_mat = k_mat;
        self.kappa_sq_field = kappa_sq_field.clone();
        Ok(())
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_map.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }

    pub fn kappa_sq_field(&self) -> &NodalField {
        &self.kappa_sq_field
    }

    pub fn rational(&self) -> Option<&RationalApproximation> {
        self.rational.as_ref()
    }

    pub fn floor_s(&self) -> usize {
        self.floor_s
    }

    pub fn dof_map(&self) -> &[usize] {
        &self.dof_map
    }

    pub fn k_matrix(&self) -> &SparseMatrix {
        &self.k_mat
    }

    pub fn m_lumped(&self) -> &[f64] {
        &self.m_lumped
    }

    pub fn d_kappa(&self) -> &[f64] {
        &self.d_kappa
    }

    /// Direct solve K x = b with the cached factorisation.
    pub fn solve_k(&self, b: &[f64]) -> Vec<f64> {
        self.k_chol.solve(b)
    }

    /// u = S ξ. Input length = number of degrees of freedom; the result is
    /// zero-extended to the full grid under Dirichlet conditions.
    pub fn apply_sampling_map(&self, xi: &[f64]) -> Result<NodalField> {
        let v = self.apply_sampling_map_dofs(xi)?;
        Ok(self.extend_to_field(&v))
    }

    /// Same as [`apply_sampling_map`] but staying on the dof vector.
    pub fn apply_sampling_map_dofs(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_dofs();
        if xi.len() != n {
            return Err(Error::Dimension(format!(
                "sampling map input length {} != {} dofs",
                xi.len(),
                n
            )));
        }
        let eta = self.params.eta_tilde;
        // b = η̃ D_κ C^{-T} ξ
        let mut b: Vec<f64> = (0..n).map(|i| eta * self.d_kappa[i] * xi[i] / self.sqrt_m[i]).collect();
        for _ in 0..self.floor_s {
            let mb: Vec<f64> = b.iter().zip(&self.m_lumped).map(|(v, m)| v * m).collect();
            b = self.k_chol.solve(&mb);
        }
        if let Some(r) = &self.rational {
            let mb: Vec<f64> = b.iter().zip(&self.m_lumped).map(|(v, m)| v * m).collect();
            let mut acc: Vec<f64> = b.iter().map(|v| r.c0 * v).collect();
            for (chol, c) in self.shift_chols.iter().zip(&r.residues) {
                let x = chol.solve(&mb);
                for (a, xi_) in acc.iter_mut().zip(&x) {
                    *a += c * xi_;
                }
            }
            b = acc;
        }
        Ok(b)
    }

    /// Sᵀ v in the Euclidean pairing on dof vectors.
    pub fn apply_sampling_map_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_dofs();
        if v.len() != n {
            return Err(Error::Dimension(format!(
                "sampling map transpose input length {} != {} dofs",
                v.len(),
                n
            )));
        }
        let mut t: Vec<f64> = match &self.rational {
            None => v.to_vec(),
            Some(r) => {
                // (c0 I + Σ c_j M (K - d_j M)^{-1}) v
                let mut acc: Vec<f64> = v.iter().map(|x| r.c0 * x).collect();
                for (chol, c) in self.shift_chols.iter().zip(&r.residues) {
                    let x = chol.solve(v);
                    for ((a, xi_), m) in acc.iter_mut().zip(&x).zip(&self.m_lumped) {
                        *a += c * m * xi_;
                    }
                }
                acc
            }
        };
        for _ in 0..self.floor_s {
            let y = self.k_chol.solve(&t);
            t = y.iter().zip(&self.m_lumped).map(|(v, m)| v * m).collect();
        }
        let eta = self.params.eta_tilde;
        Ok((0..n).map(|i| eta * self.d_kappa[i] * t[i] / self.sqrt_m[i]).collect())
    }

    /// Zero-extends a dof vector to a full nodal field.
    pub fn extend_to_field(&self, dofs: &[f64]) -> NodalField {
        let mut values = vec![0.0; self.grid.n_nodes()];
        for (v, &i) in dofs.iter().zip(&self.dof_map) {
            values[i] = *v;
        }
        NodalField { grid: self.grid, values }
    }

    /// Restricts a full nodal field to the dof vector.
    pub fn restrict_to_dofs(&self, field: &NodalField) -> Result<Vec<f64>> {
        if field.grid != self.grid {
            return Err(Error::Dimension("field grid mismatch".into()));
        }
        Ok(self.dof_map.iter().map(|&i| field.values[i]).collect())
    }

    /// Exact fractional solve L^{-s} b via the dense generalised
    /// eigendecomposition (oracle; capped problem size).
    pub fn dem_solve(&self, b: &[f64], s: f64) -> Result<Vec<f64>> {
        let n = self.n_dofs();
        if b.len() != n {
            return Err(Error::Dimension("dem_solve length mismatch".into()));
        }
        let (lams, vecs) = dense_symmetric_eig(&self.k_mat, &self.m_lumped)?;
        let mb: Vec<f64> = b.iter().zip(&self.m_lumped).map(|(v, m)| v * m).collect();
        let mut out = vec![0.0; n];
        for (lam, u) in lams.iter().zip(&vecs) {
            if *lam <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: 0, value: *lam });
            }
            let coeff: f64 =
                u.iter().zip(&mb).map(|(a, b)| a * b).sum::<f64>() * lam.powf(-s);
            for (o, ui) in out.iter_mut().zip(u) {
                *o += coeff * ui;
            }
        }
        Ok(out)
    }

    /// Full sampling map via the dense oracle: η̃ L^{-s} D_κ C^{-T} ξ with the
    /// exact fractional power in place of the ⌊s⌋-solves-plus-rational chain.
    pub fn apply_sampling_map_dem(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_dofs();
        if xi.len() != n {
            return Err(Error::Dimension("sampling map input length mismatch".into()));
        }
        let eta = self.params.eta_tilde;
        let b: Vec<f64> = (0..n).map(|i| eta * self.d_kappa[i] * xi[i] / self.sqrt_m[i]).collect();
        self.dem_solve(&b, self.params.s())
    }
}

fn resolve_rational(
    config: &RationalConfig,
    s_frac: f64,
    k_mat: &SparseMatrix,
    m_lumped: &[f64],
    kappa_sq_field: &NodalField,
) -> Result<RationalApproximation> {
    let lo_needed = kappa_sq_field.values.iter().cloned().fold(f64::INFINITY, f64::min);
    if let Some(r) = &config.reuse {
        let hi_needed = rational::gershgorin_upper(k_mat, m_lumped);
        let covers = (r.exponent_s - s_frac).abs() <= 1e-12
            && r.interval.lambda_lo <= lo_needed * (1.0 + RATIONAL_REFIT_DRIFT)
            && r.interval.lambda_hi * (1.0 + RATIONAL_REFIT_DRIFT) >= hi_needed;
        if covers {
            return Ok(r.clone());
        }
    }
    let interval = match config.interval {
        Some(iv) => iv,
        None => estimate_spectral_interval(k_mat, m_lumped, lo_needed)?,
    };
    brasil_fit(s_frac, &interval, config.effective_degree())
}

/// Closed-form Matérn kernel for half-integer smoothness; c(0) = σ².
pub fn matern_kernel(r: f64, rho: f64, sigma_sq: f64, nu: f64) -> Result<f64> {
    if r < 0.0 || rho <= 0.0 || sigma_sq <= 0.0 {
        return Err(Error::InvalidArgument("matern_kernel needs r >= 0, rho > 0, sigma_sq > 0".into()));
    }
    let kr = (2.0 * nu).sqrt() * r / rho;
    let shape = if (nu - 0.5).abs() < 1e-12 {
        1.0
    } else if (nu - 1.5).abs() < 1e-12 {
        1.0 + kr
    } else if (nu - 2.5).abs() < 1e-12 {
        1.0 + kr + kr * kr / 3.0
    } else {
        return Err(Error::Unsupported(format!(
            "closed-form Matérn kernel only for nu in {{1/2, 3/2, 5/2}}, got {nu}"
        )));
    };
    Ok(sigma_sq * shape * (-kr).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid_1d(n: usize) -> Grid {
        Grid::new(1, n, Boundary::Neumann).unwrap()
    }

    #[test]
    fn eta_direct_substitutions() {
        // σ²=1, κ=1, ν=1, d=2: η² = 4π Γ(2)/Γ(1) = 4π.
        let eta = compute_eta(1.0, 1.0, 1.0, 2).unwrap();
        assert!((eta * eta - 4.0 * PI).abs() < 1e-12);
        // Scaling law in σ².
        let e1 = compute_eta(1.0, 2.0, 1.5, 2).unwrap();
        let e2 = compute_eta(2.0, 2.0, 1.5, 2).unwrap();
        assert!((e2 / e1 - 2.0_f64.sqrt()).abs() < 1e-12);
        // σ²=1, ν=3, d=2, κ²=1500: η² = 1500³·4π·Γ(4)/Γ(3) = 1500³·12π.
        let eta = compute_eta(1.0, 1500.0_f64.sqrt(), 3.0, 2).unwrap();
        let expect = 1500.0_f64.powi(3) * 12.0 * PI;
        assert!((eta * eta - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn eta_tilde_is_eta_over_kappa_nu() {
        let p = MaternParams::new(4.0, 2, 1.0).unwrap();
        let kappa = 1500.0_f64.sqrt();
        let eta = compute_eta(1.0, kappa, p.nu, 2).unwrap();
        assert!((eta / kappa.powf(p.nu) - p.eta_tilde).abs() < 1e-12 * p.eta_tilde);
    }

    #[test]
    fn rho_kappa_paper_values() {
        // ν = 3 throughout (α = 4, d = 2).
        let rho = rho_kappa_convert(1500.0_f64.sqrt(), 3.0).unwrap();
        assert!((rho - (6.0_f64 / 1500.0).sqrt()).abs() < 1e-14);
        assert!((rho - 0.0632).abs() < 5e-4);
        let rho = rho_kappa_convert(50.0_f64.sqrt(), 3.0).unwrap();
        assert!((rho - 0.346).abs() < 1e-3);
        let rho = rho_kappa_convert(100.0, 3.0).unwrap();
        assert!((rho - 0.0245).abs() < 5e-5);
        // Involution.
        let x = 0.73;
        let twice = rho_kappa_convert(rho_kappa_convert(x, 2.0).unwrap(), 2.0).unwrap();
        assert!((twice - x).abs() < 1e-14);
    }

    #[test]
    fn f_transform_reference_values() {
        let f = FTransform::new(50.0, 1e4, 200.0, 1.0).unwrap();
        assert!((f.eval(0.0) - 250.0).abs() < 1e-12);
        assert!((f.eval(-1000.0) - 50.0).abs() < 1e-12);
        assert_eq!(f.eval(10.0), 1e4);
        // Monotone and bounded on a sweep.
        let mut prev = f.eval(-30.0);
        for i in -299..300 {
            let v = f.eval(i as f64 / 10.0);
            assert!(v >= prev - 1e-12 && v >= 50.0 && v <= 1e4);
            prev = v;
        }
    }

    #[test]
    fn f_scaling_for_alpha() {
        let f = FTransform::new(50.0, 1e4, 200.0, 1.0).unwrap();
        let same = f.scaled_for_alpha(4.0).unwrap();
        assert_eq!(f, same);
        let a3 = f.scaled_for_alpha(3.0).unwrap();
        assert!((a3.f_minus - 100.0 / 3.0).abs() < 1e-12);
        assert!((a3.f_plus - 2e4 / 3.0).abs() < 1e-10);
        assert_eq!(a3.b, 1.0);
        let a15 = f.scaled_for_alpha(1.5).unwrap();
        assert!((a15.a - 200.0 / 6.0).abs() < 1e-12);
        assert!(f.scaled_for_alpha(1.0).is_err());
    }

    #[test]
    fn split_s_handles_integer_and_fractional() {
        let p = MaternParams::new(4.0, 2, 1.0).unwrap();
        assert_eq!(p.split_s(), (2, 0.0));
        assert!(!p.is_fractional());
        let p = MaternParams::new(3.0, 2, 1.0).unwrap();
        let (fs, frac) = p.split_s();
        assert_eq!(fs, 1);
        assert!((frac - 0.5).abs() < 1e-12);
        let p = MaternParams::new(2.0, 2, 1.0).unwrap();
        assert_eq!(p.split_s(), (1, 0.0));
    }

    #[test]
    fn white_noise_unit_mass_and_determinism() {
        let m = vec![1.0; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w1 = sample_white_noise(&m, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w2 = sample_white_noise(&m, &mut rng).unwrap();
        assert_eq!(w1, w2, "fixed seed must reproduce bit-identically");
        assert!(w1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn white_noise_covariance_monte_carlo() {
        // Cov(M w) = M for lumped M: variances m_i, zero cross-covariance.
        let grid = grid_1d(16);
        let m = fem::lump_mass(&fem::assemble_mass(&grid));
        let n = m.len();
        let trials = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut sum = vec![0.0; n * n];
        for _ in 0..trials {
            let w = sample_white_noise(&m, &mut rng).unwrap();
            let mw: Vec<f64> = w.iter().zip(&m).map(|(w, m)| w * m).collect();
            for i in 0..n {
                for j in 0..n {
                    sum[i * n + j] += mw[i] * mw[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let emp = sum[i * n + j] / trials as f64;
                let expect = if i == j { m[i] } else { 0.0 };
                // var of the sample covariance of products of normals.
                let se = ((m[i] * m[j] + expect * expect) / trials as f64).sqrt();
                assert!(
                    (emp - expect).abs() <= 3.0 * se,
                    "cov[{i},{j}] = {emp} vs {expect} (se {se})"
                );
            }
        }
    }

    #[test]
    fn integer_alpha_skips_rational() {
        let grid = grid_1d(12);
        let p = MaternParams::new(4.0, 1, 1.0).unwrap();
        let kappa = NodalField::constant(grid, 20.0);
        let op = LayerOperator::build(&grid, &p, &kappa, &RationalConfig::default()).unwrap();
        assert!(op.rational().is_none());
        assert_eq!(op.floor_s(), 2);
        let p3 = MaternParams::new(3.0, 1, 1.0).unwrap();
        let op3 = LayerOperator::build(&grid, &p3, &kappa, &RationalConfig::default()).unwrap();
        assert!(op3.rational().is_some());
        assert_eq!(op3.floor_s(), 1);
        assert_eq!(op3.rational().unwrap().degree_k, 3);
    }

    #[test]
    fn sampling_map_linear_and_zero() {
        let grid = grid_1d(20);
        let p = MaternParams::new(3.0, 1, 1.0).unwrap();
        let kappa = NodalField::constant(grid, 30.0);
        let op = LayerOperator::build(&grid, &p, &kappa, &RationalConfig::default()).unwrap();
        let zero = op.apply_sampling_map(&vec![0.0; 20]).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        let xi: Vec<f64> = (0..20).map(|i| (i as f64 * 0.31).sin()).collect();
        let u1 = op.apply_sampling_map_dofs(&xi).unwrap();
        let u2 = op.apply_sampling_map_dofs(&xi.iter().map(|v| 2.0 * v).collect::<Vec<_>>()).unwrap();
        for (a, b) in u1.iter().zip(&u2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn adjoint_identity_fractional_1d() {
        let grid = grid_1d(24);
        let p = MaternParams::new(3.0, 1, 1.0).unwrap();
        let kappa = NodalField::from_fn(grid, |x, _| 20.0 + 10.0 * x);
        let op = LayerOperator::build(&grid, &p, &kappa, &RationalConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let xi: Vec<f64> = (0..24).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..24).map(|_| rng.random::<f64>() - 0.5).collect();
            let sxi = op.apply_sampling_map_dofs(&xi).unwrap();
            let stv = op.apply_sampling_map_transpose(&v).unwrap();
            let lhs: f64 = sxi.iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = xi.iter().zip(&stv).map(|(a, b)| a * b).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!((lhs - rhs).abs() / scale <= 1e-10, "adjoint deviation {}", (lhs - rhs).abs() / scale);
        }
    }

    #[test]
    fn dem_solve_agrees_with_direct_solves() {
        let grid = grid_1d(32);
        let p = MaternParams::new(2.0, 1, 1.0).unwrap();
        let kappa = NodalField::constant(grid, 12.0);
        let op = LayerOperator::build(&grid, &p, &kappa, &RationalConfig::default()).unwrap();
        let b: Vec<f64> = (0..32).map(|i| ((i * i) as f64 * 0.13).cos()).collect();
        // s = 0 is the identity.
        let id = op.dem_solve(&b, 0.0).unwrap();
        for (a, c) in id.iter().zip(&b) {
            assert!((a - c).abs() <= 1e-10 * (1.0 + c.abs()));
        }
        // s = 1 equals the Cholesky path K x = M b.
        let mb: Vec<f64> = b.iter().zip(op.m_lumped()).map(|(v, m)| v * m).collect();
        let direct = op.solve_k(&mb);
        let dem = op.dem_solve(&b, 1.0).unwrap();
        for (a, c) in dem.iter().zip(&direct) {
            assert!((a - c).abs() <= 1e-8 * (1.0 + c.abs()), "{a} vs {c}");
        }
        // Semigroup: (L^{-1/2})² = L^{-1}.
        let half = op.dem_solve(&b, 0.5).unwrap();
        let twice = op.dem_solve(&half, 0.5).unwrap();
        for (a, c) in twice.iter().zip(&dem) {
            assert!((a - c).abs() <= 1e-8 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn update_kappa_matches_fresh_build() {
        let grid = Grid::new(2, 8, Boundary::Neumann).unwrap();
        let p = MaternParams::new(3.0, 2, 1.0).unwrap();
        let k1 = NodalField::constant(grid, 40.0);
        let k2 = NodalField::from_fn(grid, |x, y| 40.0 + 25.0 * (x + y));
        let mut updated = LayerOperator::build(&grid, &p, &k1, &RationalConfig::default()).unwrap();
        updated.update_kappa_sq(&k2).unwrap();
        // Fresh build with the same rational fit for a like-for-like check.
        let cfg = RationalConfig {
            reuse: updated.rational().cloned(),
            ..Default::default()
        };
        let fresh = LayerOperator::build(&grid, &p, &k2, &cfg).unwrap();
        let xi: Vec<f64> = (0..grid.n_nodes()).map(|i| ((i as f64) * 0.7).sin()).collect();
        let a = updated.apply_sampling_map_dofs(&xi).unwrap();
        let b = fresh.apply_sampling_map_dofs(&xi).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn dirichlet_layer_zero_boundary() {
        let grid = Grid::new(2, 6, Boundary::Dirichlet).unwrap();
        let p = MaternParams::new(2.0, 2, 1.0).unwrap();
        let kappa = NodalField::constant(grid, 25.0);
        let op = LayerOperator::build(&grid, &p, &kappa, &RationalConfig::default()).unwrap();
        assert_eq!(op.n_dofs(), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = sample_white_noise(&vec![1.0; 16], &mut rng).unwrap();
        let u = op.apply_sampling_map(&xi).unwrap();
        for k in 0..grid.n_nodes() {
            if grid.is_boundary_node(k) {
                assert_eq!(u.values[k], 0.0);
            }
        }
    }

    #[test]
    fn matern_kernel_closed_forms() {
        assert!((matern_kernel(0.0, 0.3, 2.5, 0.5).unwrap() - 2.5).abs() < 1e-14);
        // ν = 1/2: σ² e^{-r/ρ}.
        let v = matern_kernel(0.2, 0.4, 1.0, 0.5).unwrap();
        assert!((v - (-0.2_f64 / 0.4).exp()).abs() < 1e-14);
        // ν = 3/2 at r = ρ: σ²(1+√3)e^{-√3}.
        let v = matern_kernel(0.4, 0.4, 1.3, 1.5).unwrap();
        let expect = 1.3 * (1.0 + 3.0_f64.sqrt()) * (-(3.0_f64.sqrt())).exp();
        assert!((v - expect).abs() < 1e-12);
        // Monotone decreasing in r.
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let v = matern_kernel(i as f64 * 0.05, 0.3, 1.0, 2.5).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(matern_kernel(0.1, 0.3, 1.0, 1.0).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(MaternParams::new(0.5, 1, 1.0).is_err()); // ν = 0
        assert!(MaternParams::new(0.6, 1, 1.0).is_ok());
        assert!(MaternParams::new(0.5, 2, 1.0).is_err());
        assert!(MaternParams::new(1.0, 2, 0.0).is_err());
        assert!(FTransform::new(-1.0, 10.0, 1.0, 1.0).is_err());
        assert!(FTransform::new(5.0, 2.0, 1.0, 1.0).is_err());
    }
}
