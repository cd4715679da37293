//! The layered prior: whitening transform, the marginal data covariance of
//! the (analytically integrated-out) top layer, and the Gaussian top-layer
//! posterior.
//!
//! A prior with L layers keeps L layer operators on one grid. Layer 0 is
//! stationary with constant base κ²; layer ℓ ≥ 1 takes κ² = F(u_{ℓ-1}) with
//! the transform and base value rescaled by (2α−2)/6 so correlation lengths
//! stay comparable across α. The top layer (index L−1) never gets its own
//! noise vector: given the data d = A u_top + e it is Gaussian and is handled
//! through Σ = A C Aᵀ + Γ, with C the top-layer covariance.
//!
//! Hidden layers ℓ ≥ 1 share one fixed spectral interval
//! [F₋, gersh(K₀) + F₊] that covers every reachable reaction field, because F
//! maps into [F₋, F₊]. The rational fit therefore never depends on the chain
//! history and the whitening transform stays a fixed deterministic map — the
//! property pCN reversibility relies on.

use crate::error::{Error, Result};
use crate::fem::{self, Boundary, Grid, NodalField};
use crate::forward::ForwardOperator;
use crate::layer::{
    build_layer_operator, f_transform, FTransform, LayerOperator, MaternParams, RationalConfig,
};
use crate::rational::{gershgorin_upper, SpectralInterval};
use crate::sparse::{lsqr_solve, IterSolveReport, SparseCholesky, SparseMatrix, StopReason};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Default LSQR iteration cap for Σ solves (a multiple of the data dimension;
/// LSQR on an SPD m×m system terminates in at most m steps in exact
/// arithmetic).
pub fn default_sigma_max_iter(m: usize) -> usize {
    2 * m + 50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepGpConfig {
    /// Number of layers L ≥ 1; L = 1 is a plain stationary Matérn prior.
    pub num_layers: usize,
    pub alpha: f64,
    /// Layer-0 reaction coefficient before the (2α−2)/6 rescaling (which is
    /// applied only when hidden layers exist; a stationary prior uses it
    /// verbatim).
    pub base_kappa_sq: f64,
    /// Length-scale transform before rescaling.
    pub f_transform: FTransform,
    /// Marginal variance per layer, length `num_layers`.
    pub sigma_sq: Vec<f64>,
    pub grid: Grid,
    /// Rational approximation degree (0 = default 3).
    pub rational_degree: usize,
}

impl DeepGpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidArgument("prior needs at least one layer".into()));
        }
        if self.sigma_sq.len() != self.num_layers {
            return Err(Error::InvalidArgument(format!(
                "sigma_sq has {} entries for {} layers",
                self.sigma_sq.len(),
                self.num_layers
            )));
        }
        if !(self.base_kappa_sq > 0.0) || !self.base_kappa_sq.is_finite() {
            return Err(Error::InvalidArgument("base_kappa_sq must be positive".into()));
        }
        // alpha > d/2 (and per-layer sigma_sq > 0) are enforced here once.
        for &s in &self.sigma_sq {
            MaternParams::new(self.alpha, self.grid.dim, s)?;
        }
        Ok(())
    }
}

/// Whitened coordinates of the hidden layers: i.i.d. standard normal vectors
/// w_0..w_{L-2}, one per layer below the marginalised top, each of dof length.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedState {
    pub noise: Vec<Vec<f64>>,
}

impl WhitenedState {
    pub fn zeros(n_layers: usize, n: usize) -> Self {
        WhitenedState { noise: vec![vec![0.0; n]; n_layers] }
    }

    pub fn sample<R: Rng + ?Sized>(n_layers: usize, n: usize, rng: &mut R) -> Self {
        WhitenedState {
            noise: (0..n_layers)
                .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
        }
    }

    pub fn validate(&self, n_layers: usize, n: usize) -> Result<()> {
        if self.noise.len() != n_layers {
            return Err(Error::Dimension(format!(
                "state has {} noise vectors, prior needs {}",
                self.noise.len(),
                n_layers
            )));
        }
        for w in &self.noise {
            if w.len() != n {
                return Err(Error::Dimension(format!(
                    "noise vector length {} does not match {} dofs",
                    w.len(),
                    n
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("whitened state".into()));
            }
        }
        Ok(())
    }

    /// Stacks all noise vectors into one coordinate vector (layer-major).
    pub fn flatten(&self) -> Vec<f64> {
        self.noise.iter().flatten().copied().collect()
    }

    pub fn from_flat(n_layers: usize, n: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != n_layers * n {
            return Err(Error::Dimension(format!(
                "flat state length {} != {} x {}",
                flat.len(),
                n_layers,
                n
            )));
        }
        Ok(WhitenedState {
            noise: (0..n_layers).map(|l| flat[l * n..(l + 1) * n].to_vec()).collect(),
        })
    }
}

/// Deep GP prior with cached layer operators. Layer κ² updates reuse the
/// symbolic factorisations; see the module docs for the fixed-interval policy.
#[derive(Debug, Clone)]
pub struct DeepGpPrior {
    config: DeepGpConfig,
    f_scaled: Option<FTransform>,
    layers: Vec<LayerOperator>,
}

impl DeepGpPrior {
    pub fn new(config: DeepGpConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid;
        let deep = config.num_layers >= 2;
        let f_scaled = if deep { Some(config.f_transform.scaled_for_alpha(config.alpha)?) } else { None };
        let base_kappa = if deep {
            config.base_kappa_sq * (2.0 * config.alpha - 2.0) / 6.0
        } else {
            config.base_kappa_sq
        };

        let mut layers = Vec::with_capacity(config.num_layers);
        let base_params = MaternParams::new(config.alpha, grid.dim, config.sigma_sq[0])?;
        let base_field = NodalField::constant(grid, base_kappa);
        layers.push(build_layer_operator(
            &grid,
            &base_params,
            &base_field,
            &RationalConfig::with_degree(config.rational_degree),
        )?);

        if deep {
            let f = f_scaled.as_ref().unwrap();
            let interval = fixed_layer_interval(&grid, f)?;
            let init_field = NodalField::constant(grid, f.eval(0.0));
            for l in 1..config.num_layers {
                let params = MaternParams::new(config.alpha, grid.dim, config.sigma_sq[l])?;
                layers.push(build_layer_operator(
                    &grid,
                    &params,
                    &init_field,
                    &RationalConfig {
                        degree_k: config.rational_degree,
                        interval: Some(interval),
                        reuse: None,
                    },
                )?);
            }
        }
        Ok(DeepGpPrior { config, f_scaled, layers })
    }

    pub fn config(&self) -> &DeepGpConfig {
        &self.config
    }

    /// Rescaled transform (None for the stationary L = 1 prior).
    pub fn f_scaled(&self) -> Option<&FTransform> {
        self.f_scaled.as_ref()
    }

    /// Number of whitened noise vectors (L − 1).
    pub fn n_noise_layers(&self) -> usize {
        self.config.num_layers - 1
    }

    pub fn n_dofs(&self) -> usize {
        self.layers[0].n_dofs()
    }

    pub fn base_layer(&self) -> &LayerOperator {
        &self.layers[0]
    }

    pub fn top_layer(&self) -> &LayerOperator {
        self.layers.last().unwrap()
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> WhitenedState {
        WhitenedState::sample(self.n_noise_layers(), self.n_dofs(), rng)
    }

    /// T̄(w̄): hidden fields u_0..u_{L-2}. Deterministic in `state`; evaluating
    /// the same state twice is bit-identical.
    pub fn whiten_transform(&mut self, state: &WhitenedState) -> Result<Vec<NodalField>> {
        state.validate(self.n_noise_layers(), self.n_dofs())?;
        let mut fields: Vec<NodalField> = Vec::with_capacity(self.n_noise_layers());
        for l in 0..self.n_noise_layers() {
            if l > 0 {
                let kappa = f_transform(self.f_scaled.as_ref().unwrap(), &fields[l - 1])?;
                self.layers[l].update_kappa_sq(&kappa)?;
            }
            fields.push(self.layers[l].apply_sampling_map(&state.noise[l])?);
        }
        Ok(fields)
    }

    /// Points the top layer's reaction field at F(u_below).
    pub fn update_top_layer(&mut self, u_below: &NodalField) -> Result<()> {
        let f = self
            .f_scaled
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("stationary prior has no hidden layer".into()))?;
        let kappa = f_transform(f, u_below)?;
        let top = self.layers.len() - 1;
        self.layers[top].update_kappa_sq(&kappa)
    }

    /// Whitening transform plus top-layer refresh in one step; returns the
    /// hidden fields (empty for L = 1, where the top layer is fixed).
    pub fn advance_to_state(&mut self, state: &WhitenedState) -> Result<Vec<NodalField>> {
        let fields = self.whiten_transform(state)?;
        if let Some(last) = fields.last() {
            let kappa = f_transform(self.f_scaled.as_ref().unwrap(), last)?;
            let top = self.layers.len() - 1;
            self.layers[top].update_kappa_sq(&kappa)?;
        }
        Ok(fields)
    }

    /// Full prior draw of the top layer given hidden noise and explicit top
    /// noise (used by the prior showcase and Monte Carlo tests).
    pub fn sample_top(&mut self, state: &WhitenedState, xi_top: &[f64]) -> Result<NodalField> {
        self.advance_to_state(state)?;
        self.top_layer().apply_sampling_map(xi_top)
    }
}

/// Fixed spectral interval covering every reachable hidden-layer operator:
/// κ² ∈ [F₋, F₊] pointwise, and for K(κ²) = K₀ + M diag(κ²) the Gershgorin
/// bound of M⁻¹K is at most gersh(M⁻¹K₀) + F₊.
fn fixed_layer_interval(grid: &Grid, f: &FTransform) -> Result<SpectralInterval> {
    let zero = NodalField::constant(*grid, 0.0);
    let k0_full = fem::assemble_stiffness_reaction(grid, &zero)?;
    let m_full = fem::lump_mass(&fem::assemble_mass(grid));
    let (k0, m) = match grid.boundary {
        Boundary::Neumann => (k0_full, m_full),
        Boundary::Dirichlet => {
            let (k, map) = fem::apply_dirichlet(&k0_full, grid)?;
            let m: Vec<f64> = map.iter().map(|&i| m_full[i]).collect();
            (k, m)
        }
    };
    SpectralInterval::new(f.f_minus, gershgorin_upper(&k0, &m) + f.f_plus)
}

/// Marginal data covariance Σ = A C Aᵀ + Γ of the top layer, held as actions.
#[derive(Debug, Clone)]
pub struct TopModel<'a> {
    layer: &'a LayerOperator,
    forward: &'a ForwardOperator,
    gamma_diag: Vec<f64>,
    gamma_sqrt: Vec<f64>,
}

impl<'a> TopModel<'a> {
    pub fn new(
        layer: &'a LayerOperator,
        forward: &'a ForwardOperator,
        gamma_diag: Vec<f64>,
    ) -> Result<Self> {
        if forward.n_in() != layer.grid().n_nodes() {
            return Err(Error::Dimension(format!(
                "forward operator takes {} inputs, grid has {} nodes",
                forward.n_in(),
                layer.grid().n_nodes()
            )));
        }
        if gamma_diag.len() != forward.m_out() {
            return Err(Error::Dimension(format!(
                "noise diagonal length {} != {} observations",
                gamma_diag.len(),
                forward.m_out()
            )));
        }
        if gamma_diag.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidArgument("noise covariance must be positive".into()));
        }
        let gamma_sqrt = gamma_diag.iter().map(|g| g.sqrt()).collect();
        Ok(TopModel { layer, forward, gamma_diag, gamma_sqrt })
    }

    pub fn m(&self) -> usize {
        self.forward.m_out()
    }

    pub fn layer(&self) -> &LayerOperator {
        self.layer
    }

    pub fn forward(&self) -> &ForwardOperator {
        self.forward
    }

    pub fn gamma_diag(&self) -> &[f64] {
        &self.gamma_diag
    }

    /// C v = S Sᵀ v on full node vectors (zero outside the dofs).
    pub fn covariance_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.forward.n_in() {
            return Err(Error::Dimension("covariance input length".into()));
        }
        let vd: Vec<f64> = self.layer.dof_map().iter().map(|&i| v[i]).collect();
        let t = self.layer.apply_sampling_map_transpose(&vd)?;
        let u = self.layer.apply_sampling_map_dofs(&t)?;
        Ok(self.layer.extend_to_field(&u).values)
    }

    /// Σ y = A S Sᵀ Aᵀ y + Γ y, fully matrix-free.
    pub fn sigma_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        let w = self.forward.apply_transpose(y)?;
        let cw = self.covariance_matvec(&w)?;
        let mut out = self.forward.apply(&cw)?;
        for (o, (g, yi)) in out.iter_mut().zip(self.gamma_diag.iter().zip(y)) {
            *o += g * yi;
        }
        Ok(out)
    }

    /// Solves Σ x = rhs through LSQR on the stacked least-squares system with
    /// blocks Sᵀ Aᵀ and Γ^{1/2} (stopping rule S2 at `tol`). Exhausting
    /// `max_iter` is an error.
    pub fn sigma_solve(
        &self,
        rhs: &[f64],
        tol: f64,
        precond: Option<&SigmaPreconditioner>,
        max_iter: usize,
    ) -> Result<(Vec<f64>, IterSolveReport)> {
        let m = self.m();
        if rhs.len() != m {
            return Err(Error::Dimension("sigma_solve rhs length".into()));
        }
        let n_dof = self.layer.n_dofs();
        let rows = n_dof + m;

        let apply_q = |x: &[f64], out: &mut [f64]| {
            let w = self.forward.apply_transpose(x).expect("validated dims");
            let wd: Vec<f64> = self.layer.dof_map().iter().map(|&i| w[i]).collect();
            let t = self.layer.apply_sampling_map_transpose(&wd).expect("validated dims");
            out[..n_dof].copy_from_slice(&t);
            for i in 0..m {
                out[n_dof + i] = self.gamma_sqrt[i] * x[i];
            }
        };
        let apply_qt = |y: &[f64], out: &mut [f64]| {
            let u = self.layer.apply_sampling_map_dofs(&y[..n_dof]).expect("validated dims");
            let field = self.layer.extend_to_field(&u);
            let av = self.forward.apply(&field.values).expect("validated dims");
            for i in 0..m {
                out[i] = av[i] + self.gamma_sqrt[i] * y[n_dof + i];
            }
        };

        let mut b = vec![0.0; rows];
        for i in 0..m {
            b[n_dof + i] = rhs[i] / self.gamma_sqrt[i];
        }

        let papply = precond.map(|p| {
            move |src: &[f64], dst: &mut [f64]| p.apply_into(src, dst)
        });
        let pref: Option<&dyn Fn(&[f64], &mut [f64])> =
            papply.as_ref().map(|f| f as &dyn Fn(&[f64], &mut [f64]));

        let (x, report) = lsqr_solve(rows, m, apply_q, apply_qt, &b, tol, max_iter, pref)?;
        if report.stop == StopReason::MaxIter {
            return Err(Error::NonConvergence(format!(
                "sigma_solve: LSQR exhausted {max_iter} iterations (residual {:.3e})",
                report.final_residual
            )));
        }
        Ok((x, report))
    }

    /// Posterior of the top layer given observations: analytic mean plus a
    /// handle for pathwise samples.
    pub fn posterior(
        &self,
        d_obs: &[f64],
        tol: f64,
        precond: Option<&SigmaPreconditioner>,
        max_iter: usize,
    ) -> Result<TopLayerPosterior<'_, 'a>> {
        if d_obs.len() != self.m() {
            return Err(Error::Dimension("posterior data length".into()));
        }
        let (x, _) = self.sigma_solve(d_obs, tol, precond, max_iter)?;
        let w = self.forward.apply_transpose(&x)?;
        let mean_values = self.covariance_matvec(&w)?;
        let mean = NodalField::new(*self.layer.grid(), mean_values)?;
        Ok(TopLayerPosterior { model: self, mean, d_obs: d_obs.to_vec(), tol, max_iter })
    }
}

/// Gaussian posterior of the top layer for fixed hidden layers: the mean and
/// a pathwise sampler (prior draw corrected through one Σ solve).
#[derive(Debug, Clone)]
pub struct TopLayerPosterior<'m, 'a> {
    model: &'m TopModel<'a>,
    pub mean: NodalField,
    d_obs: Vec<f64>,
    tol: f64,
    max_iter: usize,
}

impl TopLayerPosterior<'_, '_> {
    /// Matheron-style draw: u + C Aᵀ Σ⁻¹ (d − A u − e) with u a prior draw
    /// and e a noise draw.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        precond: Option<&SigmaPreconditioner>,
    ) -> Result<NodalField> {
        let model = self.model;
        let layer = model.layer;
        let n_dof = layer.n_dofs();
        let xi: Vec<f64> = (0..n_dof).map(|_| rng.sample(StandardNormal)).collect();
        let u = layer.apply_sampling_map(&xi)?;
        let au = model.forward.apply(&u.values)?;
        let m = model.m();
        let mut resid = vec![0.0; m];
        for i in 0..m {
            let e: f64 = rng.sample(StandardNormal);
            resid[i] = self.d_obs[i] - au[i] - model.gamma_sqrt[i] * e;
        }
        let (x, _) = model.sigma_solve(&resid, self.tol, precond, self.max_iter)?;
        let w = model.forward.apply_transpose(&x)?;
        let corr = model.covariance_matvec(&w)?;
        let values = u.values.iter().zip(&corr).map(|(a, b)| a + b).collect();
        NodalField::new(*layer.grid(), values)
    }
}

/// Sparse precision of the layer covariance C = S Sᵀ for non-fractional
/// orders: P = η̃⁻² (K M⁻¹)^s diag(m κ^{-2ν}) (M⁻¹ K)^s with s = α/2 ∈ ℕ.
/// `alpha` may differ from the layer's own order (the preconditioner rounds
/// up); ν and η̃ are recomputed for it.
pub fn assemble_precision(layer: &LayerOperator, alpha: f64) -> Result<SparseMatrix> {
    let params = MaternParams::new(alpha, layer.grid().dim, layer.params().sigma_sq)?;
    let (s_int, s_frac) = params.split_s();
    if s_frac != 0.0 {
        return Err(Error::Unsupported(format!(
            "sparse precision needs integer α/2, got α = {alpha}"
        )));
    }
    let k = layer.k_matrix();
    let m = layer.m_lumped();
    let inv_m: Vec<f64> = m.iter().map(|v| 1.0 / v).collect();
    let mut b = k.clone();
    b.scale_rows(&inv_m);
    let mut bs = b.clone();
    for _ in 1..s_int {
        bs = bs.matmul(&b)?;
    }
    let kappa = layer.restrict_to_dofs(layer.kappa_sq_field())?;
    let eta_sq = params.eta_tilde * params.eta_tilde;
    let mid: Vec<f64> =
        kappa.iter().zip(m).map(|(ks, mi)| mi / (eta_sq * ks.powf(params.nu))).collect();
    let mut dbs = bs.clone();
    dbs.scale_rows(&mid);
    bs.transpose().matmul(&dbs)?.symmetrize()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecondMode {
    /// Woodbury when the forward operator has a sparse export, Γ⁻¹ otherwise.
    Auto,
    Woodbury,
    Gamma,
}

/// Action of Σ̃⁻¹, the data-covariance inverse at the next-larger
/// non-fractional order α̃ = 2⌈α/2⌉, via the Woodbury identity
/// Σ̃⁻¹ = Γ⁻¹ − Γ⁻¹ A (P̃ + Aᵀ Γ⁻¹ A)⁻¹ Aᵀ Γ⁻¹ with the inner matrix kept
/// sparse and Cholesky-factorised.
#[derive(Debug, Clone)]
pub struct SigmaPreconditioner {
    pub alpha_tilde: f64,
    kind: PrecondKind,
}

#[derive(Debug, Clone)]
enum PrecondKind {
    Gamma { inv_gamma: Vec<f64> },
    Woodbury { inv_gamma: Vec<f64>, a_dof: SparseMatrix, at_dof: SparseMatrix, chol: Box<SparseCholesky> },
}

impl SigmaPreconditioner {
    pub fn is_woodbury(&self) -> bool {
        matches!(self.kind, PrecondKind::Woodbury { .. })
    }

    /// Nonzeros of the inner Cholesky factor (0 for the Γ⁻¹ fallback).
    pub fn factor_nnz(&self) -> usize {
        match &self.kind {
            PrecondKind::Gamma { .. } => 0,
            PrecondKind::Woodbury { chol, .. } => chol.l_nnz(),
        }
    }

    pub fn apply_into(&self, y: &[f64], out: &mut [f64]) {
        match &self.kind {
            PrecondKind::Gamma { inv_gamma } => {
                for i in 0..y.len() {
                    out[i] = inv_gamma[i] * y[i];
                }
            }
            PrecondKind::Woodbury { inv_gamma, a_dof, at_dof, chol } => {
                let g1: Vec<f64> = y.iter().zip(inv_gamma).map(|(v, g)| v * g).collect();
                let t = at_dof.matvec(&g1);
                let z = chol.solve(&t);
                let v = a_dof.matvec(&z);
                for i in 0..y.len() {
                    out[i] = g1[i] - inv_gamma[i] * v[i];
                }
            }
        }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        self.apply_into(y, &mut out);
        out
    }
}

/// Builds the Σ̃⁻¹ preconditioner for the given top layer and forward
/// operator. Falls back to Γ⁻¹ (with a warning) when no sparse export exists
/// or when `mode` requests it.
pub fn build_sparse_preconditioner(
    layer: &LayerOperator,
    forward: &ForwardOperator,
    gamma_diag: &[f64],
    mode: PrecondMode,
) -> Result<SigmaPreconditioner> {
    if gamma_diag.len() != forward.m_out() {
        return Err(Error::Dimension("noise diagonal length".into()));
    }
    if gamma_diag.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::InvalidArgument("noise covariance must be positive".into()));
    }
    let alpha = layer.params().alpha;
    let alpha_tilde = 2.0 * (alpha / 2.0).ceil();
    let inv_gamma: Vec<f64> = gamma_diag.iter().map(|g| 1.0 / g).collect();

    let export = match (mode, forward.sparse_export()) {
        (PrecondMode::Gamma, _) => None,
        (_, Some(a)) => Some(a),
        (PrecondMode::Woodbury, None) => {
            return Err(Error::InvalidArgument(
                "Woodbury preconditioner requested but the forward operator has no sparse export"
                    .into(),
            ))
        }
        (PrecondMode::Auto, None) => {
            eprintln!("warning: forward operator has no sparse export; preconditioning with the noise precision only");
            None
        }
    };
    let Some(a_full) = export else {
        return Ok(SigmaPreconditioner { alpha_tilde, kind: PrecondKind::Gamma { inv_gamma } });
    };

    let a_dof = restrict_to_dof_columns(a_full, layer.dof_map())?;

    let p_tilde = assemble_precision(layer, alpha_tilde)?;
    let mut ag = a_dof.clone();
    ag.scale_rows(&inv_gamma);
    let at_dof = a_dof.transpose();
    let gram = at_dof.matmul(&ag)?;
    let w = p_tilde.add_scaled(1.0, &gram)?.symmetrize()?;
    let chol = SparseCholesky::factor(&w)?;
    Ok(SigmaPreconditioner {
        alpha_tilde,
        kind: PrecondKind::Woodbury { inv_gamma, a_dof, at_dof, chol: Box::new(chol) },
    })
}

/// Drops the columns of `a` that correspond to constrained boundary nodes,
/// reindexing the survivors by `dof_map`. Identity copy under Neumann.
pub(crate) fn restrict_to_dof_columns(
    a: &SparseMatrix,
    dof_map: &[usize],
) -> Result<SparseMatrix> {
    if dof_map.len() == a.n_cols {
        return Ok(a.clone());
    }
    let mut pos = vec![usize::MAX; a.n_cols];
    for (j, &node) in dof_map.iter().enumerate() {
        pos[node] = j;
    }
    let mut triplets = Vec::with_capacity(a.nnz());
    for r in 0..a.n_rows {
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            if pos[c] != usize::MAX {
                triplets.push((r, pos[c], v));
            }
        }
    }
    SparseMatrix::from_triplets(a.n_rows, dof_map.len(), &triplets)
}
