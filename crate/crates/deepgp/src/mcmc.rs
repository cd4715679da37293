//! Posterior sampling over the whitened hidden layers.
//!
//! Both samplers walk the whitened coordinates w = (w_0, …, w_{L-2}) whose
//! prior is standard normal, with the top layer integrated out against the
//! data d = A u_top + e. The marginal sampler (`run_pcn`) evaluates
//! Ψ(w) = ½ (dᵀΣ⁻¹d + log det Σ) directly, which needs sparse determinants
//! and therefore a non-fractional order and a sparse observation operator.
//! The auxiliary-variable sampler (`run_pcn_aux`) removes the determinant by
//! augmenting with z | w ~ N(0, Σ⁻¹): in the joint density the det Σ factors
//! cancel, leaving the potential Φ(z, w) = zᵀΣz + dᵀΣ⁻¹d that only takes
//! Σ-products and Σ-solves. It applies to any order and any forward operator.
//!
//! Joint density bookkeeping for the augmented chain:
//!   π(w, z) ∝ exp(−½ dᵀΣ(w)⁻¹d) det Σ(w)^{−1/2} N(w; 0, I)
//!             · det Σ(w)^{1/2} exp(−½ zᵀΣ(w)z)
//!           = exp(−½ Φ(z, w)) N(w; 0, I),
//! so a pCN move in w at fixed z accepts with min{1, exp(½(Φ − Φ̂))}. The
//! half factor belongs to the acceptance ratio, not the potential: Φ is kept
//! as the plain quadratic pair so that A = 0 gives zᵀΓz + dᵀΓ⁻¹d exactly.

use crate::error::{Error, Result};
use crate::forward::{ForwardOperator, ObservationModel};
use crate::layer::LayerOperator;
use crate::linalg::dot;
use crate::prior::{
    assemble_precision, build_sparse_preconditioner, default_sigma_max_iter,
    restrict_to_dof_columns, DeepGpConfig, DeepGpPrior, PrecondMode, SigmaPreconditioner,
    TopModel, WhitenedState,
};
use crate::sparse::{SparseCholesky, SparseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

/// Steps per acceptance-rate window of the β adaptation.
pub const ADAPT_WINDOW: usize = 50;
/// Target acceptance rate of the adaptation.
pub const ACCEPT_TARGET: f64 = 0.25;
/// Step-size clip range.
pub const BETA_MIN: f64 = 1e-6;
/// Minimum stored samples before convergence diagnostics are meaningful.
pub const MIN_DIAGNOSTIC_SAMPLES: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcOptions {
    pub n_steps: usize,
    /// Steps before samples are stored; β is frozen afterwards.
    pub burn_in: usize,
    /// Keep every k-th post-burn-in state (potentials and flags are kept for
    /// every step regardless).
    pub thinning: usize,
    /// Initial pCN step size in (0, 1].
    pub beta0: f64,
    /// Gain c of the Robbins–Monro schedule γ_t = c / t over adaptation
    /// windows; 0 disables adaptation.
    pub adapt_gain: f64,
    /// Relative tolerance of the Σ solves (auxiliary sampler only).
    pub lsqr_tol: f64,
    pub precond_mode: PrecondMode,
    /// Accepted steps between preconditioner rebuilds (auxiliary sampler).
    pub precond_refresh: usize,
    pub seed: u64,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            n_steps: 20_000,
            burn_in: 10_000,
            thinning: 10,
            beta0: 0.1,
            adapt_gain: 1.0,
            lsqr_tol: 1e-3,
            precond_mode: PrecondMode::Auto,
            precond_refresh: 100,
            seed: 0,
        }
    }
}

impl McmcOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pCN step size must lie in (0, 1], got {}",
                self.beta0
            )));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidArgument("thinning must be at least 1".into()));
        }
        if !(self.lsqr_tol > 0.0) || !self.lsqr_tol.is_finite() {
            return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
        }
        if !(self.adapt_gain >= 0.0) || !self.adapt_gain.is_finite() {
            return Err(Error::InvalidArgument("adaptation gain must be non-negative".into()));
        }
        if self.precond_refresh == 0 {
            return Err(Error::InvalidArgument("precond_refresh must be at least 1".into()));
        }
        Ok(())
    }
}

/// One Robbins–Monro update of the pCN step size after an acceptance window:
/// log β ← log β + γ_t (r − 0.25) with γ_t = gain / t for the t-th window
/// (1-based), clipped to [1e-6, 1]. Pure so that a recorded β history can be
/// replayed exactly.
pub fn adapt_beta(beta: f64, window_rate: f64, window_index: usize, gain: f64) -> f64 {
    let gamma = gain / window_index.max(1) as f64;
    (beta.ln() + gamma * (window_rate - ACCEPT_TARGET)).exp().clamp(BETA_MIN, 1.0)
}

/// Everything a finished run leaves behind. States are thinned and start at
/// the end of burn-in; potentials, acceptance flags and the β used for each
/// proposal cover every step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub sampler: String,
    pub seed: u64,
    pub config_digest: String,
    pub n_layers: usize,
    pub n_dofs: usize,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub beta_final: f64,
    pub states: Vec<WhitenedState>,
    pub potentials: Vec<f64>,
    pub accepted: Vec<bool>,
    pub betas: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    sampler: String,
    seed: u64,
    config_digest: String,
    n_layers: usize,
    n_dofs: usize,
    n_steps: usize,
    burn_in: usize,
    thinning: usize,
    beta_final: f64,
    n_states: usize,
}

impl ChainRecord {
    pub fn state_dim(&self) -> usize {
        self.n_layers * self.n_dofs
    }

    /// Post-burn-in acceptance rate (NaN when nothing ran past burn-in).
    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.len() <= self.burn_in {
            return f64::NAN;
        }
        let tail = &self.accepted[self.burn_in..];
        tail.iter().filter(|&&a| a).count() as f64 / tail.len() as f64
    }

    /// Stored states flattened layer-major, one row per sample.
    pub fn sample_rows(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.flatten()).collect()
    }

    /// Writes the record as a directory: `header.json` (metadata),
    /// `states.bin` (thinned states, flat little-endian f64) and
    /// `scalars.csv` (per-step potential, acceptance flag and β).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = RecordHeader {
            sampler: self.sampler.clone(),
            seed: self.seed,
            config_digest: self.config_digest.clone(),
            n_layers: self.n_layers,
            n_dofs: self.n_dofs,
            n_steps: self.n_steps,
            burn_in: self.burn_in,
            thinning: self.thinning,
            beta_final: self.beta_final,
            n_states: self.states.len(),
        };
        let text = serde_json::to_string_pretty(&header)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        fs::write(dir.join("header.json"), text)?;

        let mut bin = fs::File::create(dir.join("states.bin"))?;
        let mut buf = Vec::with_capacity(self.state_dim() * 8);
        for state in &self.states {
            buf.clear();
            for layer in &state.noise {
                for v in layer {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            bin.write_all(&buf)?;
        }
        bin.flush()?;

        let mut w = csv::Writer::from_path(dir.join("scalars.csv"))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_record(["step", "potential", "accepted", "beta"])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for i in 0..self.n_steps {
            w.write_record([
                i.to_string(),
                self.potentials[i].to_string(),
                u8::from(self.accepted[i]).to_string(),
                self.betas[i].to_string(),
            ])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ChainRecord> {
        let text = fs::read_to_string(dir.join("header.json"))?;
        let header: RecordHeader = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("chain header: {e}")))?;

        let mut bytes = Vec::new();
        fs::File::open(dir.join("states.bin"))?.read_to_end(&mut bytes)?;
        let dim = header.n_layers * header.n_dofs;
        if bytes.len() != header.n_states * dim * 8 {
            return Err(Error::Parse(format!(
                "states.bin holds {} bytes, header implies {}",
                bytes.len(),
                header.n_states * dim * 8
            )));
        }
        let mut states = Vec::with_capacity(header.n_states);
        for s in 0..header.n_states {
            let mut flat = Vec::with_capacity(dim);
            for k in 0..dim {
                let off = (s * dim + k) * 8;
                flat.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            }
            states.push(WhitenedState::from_flat(header.n_layers, header.n_dofs, &flat)?);
        }

        let mut potentials = Vec::with_capacity(header.n_steps);
        let mut accepted = Vec::with_capacity(header.n_steps);
        let mut betas = Vec::with_capacity(header.n_steps);
        let mut rdr = csv::Reader::from_path(dir.join("scalars.csv"))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for row in rdr.records() {
            let row = row.map_err(|e| Error::Parse(format!("chain scalars: {e}")))?;
            if row.len() != 4 {
                return Err(Error::Parse("chain scalars need 4 columns".into()));
            }
            let field = |i: usize| -> Result<f64> {
                row[i].parse().map_err(|_| Error::Parse(format!("bad scalar '{}'", &row[i])))
            };
            potentials.push(field(1)?);
            accepted.push(field(2)? != 0.0);
            betas.push(field(3)?);
        }
        if potentials.len() != header.n_steps {
            return Err(Error::Parse(format!(
                "scalars.csv holds {} steps, header says {}",
                potentials.len(),
                header.n_steps
            )));
        }
        Ok(ChainRecord {
            sampler: header.sampler,
            seed: header.seed,
            config_digest: header.config_digest,
            n_layers: header.n_layers,
            n_dofs: header.n_dofs,
            n_steps: header.n_steps,
            burn_in: header.burn_in,
            thinning: header.thinning,
            beta_final: header.beta_final,
            states,
            potentials,
            accepted,
            betas,
        })
    }
}

/// SHA-256 over the sampler name, prior configuration, run options and the
/// observation bytes, so a record can be matched to exactly one run setup.
fn chain_digest(
    sampler: &str,
    config: &DeepGpConfig,
    opts: &McmcOptions,
    obs: &ObservationModel,
) -> String {
    let mut h = Sha256::new();
    h.update(sampler.as_bytes());
    h.update(serde_json::to_string(config).expect("config serializes").as_bytes());
    h.update(serde_json::to_string(opts).expect("options serialize").as_bytes());
    h.update(obs.noise_std.to_le_bytes());
    for v in &obs.d_obs {
        h.update(v.to_le_bytes());
    }
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// pCN proposal √(1−β²) w + β χ with fresh standard-normal χ.
fn propose<R: Rng + ?Sized>(w: &WhitenedState, beta: f64, rng: &mut R) -> WhitenedState {
    let keep = (1.0 - beta * beta).max(0.0).sqrt();
    WhitenedState {
        noise: w
            .noise
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|&v| keep * v + beta * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect(),
    }
}

/// Marginal potential Ψ(w) = ½ (dᵀΣ⁻¹d + log det Σ) with all heavy terms
/// sparse: the quadratic form through the Woodbury identity on
/// W = P + AᵀΓ⁻¹A and the determinant through
/// log det Σ = log det W − log det P + log det Γ, where P is the sparse
/// precision of the top-layer covariance. Construction refuses fractional
/// orders (P would be dense) and forward operators without a sparse Gram
/// matrix — those cases belong to the auxiliary-variable sampler.
///
/// The evaluator keeps the Cholesky factors of W and P between calls; the
/// sparsity patterns are grid-determined and do not change with κ², so
/// repeated evaluations only refactor numerically.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    inv_gamma: Vec<f64>,
    logdet_gamma: f64,
    at_dof: SparseMatrix,
    gram: SparseMatrix,
    w_chol: Option<SparseCholesky>,
    p_chol: Option<SparseCholesky>,
}

impl PsiEvaluator {
    pub fn new(
        layer: &LayerOperator,
        forward: &ForwardOperator,
        gamma_diag: &[f64],
    ) -> Result<Self> {
        let (_, s_frac) = layer.params().split_s();
        if s_frac != 0.0 {
            return Err(Error::Unsupported(format!(
                "marginal potential needs integer α/2 for a sparse precision (α = {}); \
                 use the auxiliary-variable sampler",
                layer.params().alpha
            )));
        }
        if !forward.has_sparse_gram() {
            return Err(Error::Unsupported(
                "marginal potential needs a forward operator with sparse AᵀΓ⁻¹A; \
                 use the auxiliary-variable sampler"
                    .into(),
            ));
        }
        let export = forward.sparse_export().ok_or_else(|| {
            Error::Unsupported("forward operator exports no sparse matrix".into())
        })?;
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
        let inv_gamma: Vec<f64> = gamma_diag.iter().map(|g| 1.0 / g).collect();
        let logdet_gamma = gamma_diag.iter().map(|g| g.ln()).sum();
        let a_dof = restrict_to_dof_columns(export, layer.dof_map())?;
        let mut ag = a_dof.clone();
        ag.scale_rows(&inv_gamma);
        let at_dof = a_dof.transpose();
        let gram = at_dof.matmul(&ag)?.symmetrize()?;
        Ok(PsiEvaluator { inv_gamma, logdet_gamma, at_dof, gram, w_chol: None, p_chol: None })
    }

    /// Ψ at the layer's current κ². The layer must be the one the evaluator
    /// was built for (same grid and forward setup), advanced to any state.
    pub fn evaluate(&mut self, layer: &LayerOperator, d_obs: &[f64]) -> Result<f64> {
        if d_obs.len() != self.inv_gamma.len() {
            return Err(Error::Dimension("potential data length".into()));
        }
        let p = assemble_precision(layer, layer.params().alpha)?;
        let w = p.add_scaled(1.0, &self.gram)?;
        match (&mut self.w_chol, &mut self.p_chol) {
            (Some(wc), Some(pc)) => {
                wc.refactor(&w)?;
                pc.refactor(&p)?;
            }
            _ => {
                self.w_chol = Some(SparseCholesky::factor(&w)?);
                self.p_chol = Some(SparseCholesky::factor(&p)?);
            }
        }
        let wc = self.w_chol.as_ref().unwrap();
        let pc = self.p_chol.as_ref().unwrap();

        let gd: Vec<f64> = d_obs.iter().zip(&self.inv_gamma).map(|(d, g)| d * g).collect();
        let y = self.at_dof.matvec(&gd);
        let quad = dot(d_obs, &gd) - dot(&y, &wc.solve(&y));
        let logdet_sigma = wc.log_det() - pc.log_det() + self.logdet_gamma;
        let psi = 0.5 * (quad + logdet_sigma);
        if !psi.is_finite() {
            return Err(Error::NonFinite("marginal potential".into()));
        }
        Ok(psi)
    }
}

/// One-shot Ψ(w) for the layer's current state.
pub fn potential_psi(
    layer: &LayerOperator,
    forward: &ForwardOperator,
    gamma_diag: &[f64],
    d_obs: &[f64],
) -> Result<f64> {
    PsiEvaluator::new(layer, forward, gamma_diag)?.evaluate(layer, d_obs)
}

/// Draws the auxiliary variable z = Σ⁻¹ (A v + e) with v a fresh top-layer
/// prior draw and e ~ N(0, Γ); since A v + e ~ N(0, Σ), z is exactly
/// N(0, Σ⁻¹) for the current hidden layers (up to the solver tolerance).
pub fn sample_aux_variable<R: Rng + ?Sized>(
    model: &TopModel,
    tol: f64,
    precond: Option<&SigmaPreconditioner>,
    max_iter: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = model.m();
    if m == 0 {
        return Ok(Vec::new());
    }
    let n_dof = model.layer().n_dofs();
    let xi: Vec<f64> = (0..n_dof).map(|_| rng.sample(StandardNormal)).collect();
    let u = model.layer().apply_sampling_map(&xi)?;
    let av = model.forward().apply(&u.values)?;
    let mut y = av;
    for (yi, g) in y.iter_mut().zip(model.gamma_diag()) {
        let e: f64 = rng.sample(StandardNormal);
        *yi += g.sqrt() * e;
    }
    let (z, _) = model.sigma_solve(&y, tol, precond, max_iter)?;
    Ok(z)
}

/// Determinant-free joint potential Φ(z, w) = zᵀ Σ(w) z + dᵀ Σ(w)⁻¹ d,
/// costing one Σ product and one Σ solve. The joint density is
/// exp(−Φ/2) N(w; 0, I), so acceptance ratios use half the Φ difference.
pub fn potential_phi(
    model: &TopModel,
    z: &[f64],
    d_obs: &[f64],
    tol: f64,
    precond: Option<&SigmaPreconditioner>,
    max_iter: usize,
) -> Result<f64> {
    let m = model.m();
    if z.len() != m || d_obs.len() != m {
        return Err(Error::Dimension("potential input lengths".into()));
    }
    if m == 0 {
        return Ok(0.0);
    }
    let sz = model.sigma_matvec(z)?;
    let (x, _) = model.sigma_solve(d_obs, tol, precond, max_iter)?;
    let phi = dot(z, &sz) + dot(d_obs, &x);
    if !phi.is_finite() {
        return Err(Error::NonFinite("joint potential".into()));
    }
    Ok(phi)
}

struct RunBuffers {
    potentials: Vec<f64>,
    accepted: Vec<bool>,
    betas: Vec<f64>,
    states: Vec<WhitenedState>,
    window_hits: usize,
    beta: f64,
}

impl RunBuffers {
    fn new(opts: &McmcOptions) -> Self {
        let stored = if opts.n_steps > opts.burn_in {
            (opts.n_steps - opts.burn_in).div_ceil(opts.thinning)
        } else {
            0
        };
        RunBuffers {
            potentials: Vec::with_capacity(opts.n_steps),
            accepted: Vec::with_capacity(opts.n_steps),
            betas: Vec::with_capacity(opts.n_steps),
            states: Vec::with_capacity(stored),
            window_hits: 0,
            beta: opts.beta0,
        }
    }

    /// Book-keeping shared by both samplers after each accept/reject:
    /// records scalars, stores the (possibly thinned) state and runs the β
    /// adaptation at window boundaries inside burn-in.
    fn record_step(
        &mut self,
        step: usize,
        opts: &McmcOptions,
        w: &WhitenedState,
        potential: f64,
        was_accepted: bool,
    ) {
        self.potentials.push(potential);
        self.accepted.push(was_accepted);
        if was_accepted {
            self.window_hits += 1;
        }
        if step >= opts.burn_in && (step - opts.burn_in) % opts.thinning == 0 {
            self.states.push(w.clone());
        }
        if (step + 1) % ADAPT_WINDOW == 0 {
            if step < opts.burn_in && opts.adapt_gain > 0.0 {
                let rate = self.window_hits as f64 / ADAPT_WINDOW as f64;
                self.beta = adapt_beta(self.beta, rate, (step + 1) / ADAPT_WINDOW, opts.adapt_gain);
            }
            self.window_hits = 0;
        }
    }

    fn into_record(
        self,
        sampler: &str,
        opts: &McmcOptions,
        digest: String,
        n_layers: usize,
        n_dofs: usize,
    ) -> ChainRecord {
        ChainRecord {
            sampler: sampler.into(),
            seed: opts.seed,
            config_digest: digest,
            n_layers,
            n_dofs,
            n_steps: opts.n_steps,
            burn_in: opts.burn_in,
            thinning: opts.thinning,
            beta_final: self.beta,
            states: self.states,
            potentials: self.potentials,
            accepted: self.accepted,
            betas: self.betas,
        }
    }
}

fn check_run_inputs(
    prior: &DeepGpPrior,
    forward: &ForwardOperator,
    obs: &ObservationModel,
    opts: &McmcOptions,
) -> Result<()> {
    opts.validate()?;
    if prior.n_noise_layers() == 0 {
        return Err(Error::InvalidArgument(
            "sampling needs at least one hidden layer; a single-layer prior has an \
             analytic Gaussian posterior"
                .into(),
        ));
    }
    if obs.d_obs.len() != forward.m_out() {
        return Err(Error::Dimension(format!(
            "observation vector length {} != forward output {}",
            obs.d_obs.len(),
            forward.m_out()
        )));
    }
    Ok(())
}

/// Whitened pCN on the marginal posterior: propose ŵ = √(1−β²)w + βχ and
/// accept with min{1, exp(Ψ(w) − Ψ(ŵ))}. Requires the sparse Ψ path (integer
/// α/2 and sparse Gram); with β = 1 the proposals are independent prior
/// draws. The run is a pure function of (inputs, seed).
pub fn run_pcn(
    prior: &mut DeepGpPrior,
    forward: &ForwardOperator,
    obs: &ObservationModel,
    opts: &McmcOptions,
) -> Result<ChainRecord> {
    check_run_inputs(prior, forward, obs, opts)?;
    let gamma = vec![obs.noise_std * obs.noise_std; forward.m_out()];
    let digest = chain_digest("pcn", prior.config(), opts, obs);
    let n_layers = prior.n_noise_layers();
    let n = prior.n_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut evaluator = PsiEvaluator::new(prior.top_layer(), forward, &gamma)?;
    let mut w = WhitenedState::sample(n_layers, n, &mut rng);
    prior.advance_to_state(&w)?;
    let mut psi = evaluator.evaluate(prior.top_layer(), &obs.d_obs)?;

    let mut buf = RunBuffers::new(opts);
    for step in 0..opts.n_steps {
        buf.betas.push(buf.beta);
        let w_hat = propose(&w, buf.beta, &mut rng);
        prior.advance_to_state(&w_hat)?;
        let psi_hat = evaluator.evaluate(prior.top_layer(), &obs.d_obs)?;
        let accept = rng.random::<f64>().ln() < psi - psi_hat;
        if accept {
            w = w_hat;
            psi = psi_hat;
        }
        buf.record_step(step, opts, &w, psi, accept);
    }
    Ok(buf.into_record("pcn", opts, digest, n_layers, n))
}

/// Auxiliary-variable pCN: alternate an exact Gibbs refresh of
/// z | w ~ N(0, Σ(w)⁻¹) with a pCN move of w at fixed z, accepted with
/// min{1, exp(½(Φ(z, w) − Φ(z, ŵ)))}. No determinants are evaluated, so any
/// order α and any forward operator work; each step costs two Σ solves (one
/// for z, one for the proposal's data term — the current data term is reused
/// until a move is accepted). The Σ̃⁻¹ preconditioner is rebuilt from the
/// current state every `precond_refresh` accepted steps.
pub fn run_pcn_aux(
    prior: &mut DeepGpPrior,
    forward: &ForwardOperator,
    obs: &ObservationModel,
    opts: &McmcOptions,
) -> Result<ChainRecord> {
    check_run_inputs(prior, forward, obs, opts)?;
    let m = forward.m_out();
    let gamma = vec![obs.noise_std * obs.noise_std; m];
    let digest = chain_digest("pcn_aux", prior.config(), opts, obs);
    let n_layers = prior.n_noise_layers();
    let n = prior.n_dofs();
    let max_iter = default_sigma_max_iter(m);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut w = WhitenedState::sample(n_layers, n, &mut rng);
    prior.advance_to_state(&w)?;
    // `prior` always holds the current state, `scratch` the proposal; on
    // acceptance the two swap, so every step costs exactly one layer update.
    let mut scratch = prior.clone();
    let mut precond = (m > 0)
        .then(|| build_sparse_preconditioner(prior.top_layer(), forward, &gamma, opts.precond_mode))
        .transpose()?;
    let mut accepted_since_refresh = 0usize;

    // dᵀΣ(w)⁻¹d at the current state; only changes when a move is accepted.
    let mut d_term = if m > 0 {
        let model = TopModel::new(prior.top_layer(), forward, gamma.clone())?;
        let (x, _) = model.sigma_solve(&obs.d_obs, opts.lsqr_tol, precond.as_ref(), max_iter)?;
        dot(&obs.d_obs, &x)
    } else {
        0.0
    };

    let mut buf = RunBuffers::new(opts);
    for step in 0..opts.n_steps {
        buf.betas.push(buf.beta);
        if m > 0 && accepted_since_refresh >= opts.precond_refresh {
            precond = Some(build_sparse_preconditioner(
                prior.top_layer(),
                forward,
                &gamma,
                opts.precond_mode,
            )?);
            accepted_since_refresh = 0;
        }

        // Gibbs half-step: exact z refresh at the current w.
        let model = TopModel::new(prior.top_layer(), forward, gamma.clone())?;
        let z =
            sample_aux_variable(&model, opts.lsqr_tol, precond.as_ref(), max_iter, &mut rng)?;
        let phi = if m > 0 { dot(&z, &model.sigma_matvec(&z)?) + d_term } else { 0.0 };

        // pCN half-step at fixed z.
        let w_hat = propose(&w, buf.beta, &mut rng);
        scratch.advance_to_state(&w_hat)?;
        let (phi_hat, d_term_hat) = if m > 0 {
            let model_hat = TopModel::new(scratch.top_layer(), forward, gamma.clone())?;
            let zsz = dot(&z, &model_hat.sigma_matvec(&z)?);
            let (x, _) =
                model_hat.sigma_solve(&obs.d_obs, opts.lsqr_tol, precond.as_ref(), max_iter)?;
            let dt = dot(&obs.d_obs, &x);
            (zsz + dt, dt)
        } else {
            (0.0, 0.0)
        };

        let accept = rng.random::<f64>().ln() < 0.5 * (phi - phi_hat);
        let potential = if accept {
            w = w_hat;
            d_term = d_term_hat;
            accepted_since_refresh += 1;
            std::mem::swap(prior, &mut scratch);
            phi_hat
        } else {
            phi
        };
        buf.record_step(step, opts, &w, potential, accept);
    }
    Ok(buf.into_record("pcn_aux", opts, digest, n_layers, n))
}

/// Convergence summary of one or more chains over their stored states.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Mean post-burn-in acceptance rate across chains.
    pub acceptance_rate: f64,
    /// Minimum over coordinates of the univariate effective sample size
    /// (initial-positive-sequence estimator, summed over chains). NaN when
    /// every coordinate is constant.
    pub ess_single: f64,
    /// Multivariate effective sample size (batch means, summed over chains).
    pub ess_multi: f64,
    /// Multivariate potential scale reduction factor; NaN for one chain.
    pub psrf: f64,
}

/// Computes diagnostics from the stored (thinned, post-burn-in) states.
/// Needs at least 100 stored samples per chain; constant coordinates are
/// reported as degenerate with a warning rather than an error. Both ESS
/// estimators are truncated at the actual sample count.
pub fn diagnostics(chains: &[ChainRecord]) -> Result<Diagnostics> {
    if chains.is_empty() {
        return Err(Error::InvalidArgument("diagnostics need at least one chain".into()));
    }
    let dim = chains[0].state_dim();
    for c in chains {
        if c.state_dim() != dim {
            return Err(Error::Dimension("chains have different state dimensions".into()));
        }
        if c.states.len() < MIN_DIAGNOSTIC_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "diagnostics need at least {MIN_DIAGNOSTIC_SAMPLES} stored samples per \
                 chain, got {}",
                c.states.len()
            )));
        }
    }
    let rows: Vec<Vec<Vec<f64>>> = chains.iter().map(|c| c.sample_rows()).collect();

    let acceptance_rate =
        chains.iter().map(|c| c.acceptance_rate()).sum::<f64>() / chains.len() as f64;

    // Univariate ESS: per coordinate, summed over chains, minimised over
    // coordinates. Constant coordinates are skipped.
    let mut ess_single = f64::INFINITY;
    let mut any_varying = false;
    let mut column = Vec::new();
    for j in 0..dim {
        let mut total = 0.0;
        let mut varying = false;
        for chain in &rows {
            column.clear();
            column.extend(chain.iter().map(|r| r[j]));
            if let Some(e) = univariate_ess(&column) {
                total += e;
                varying = true;
            }
        }
        if varying {
            any_varying = true;
            ess_single = ess_single.min(total);
        }
    }
    if !any_varying {
        eprintln!("warning: all chain coordinates are constant; ESS is degenerate");
        ess_single = f64::NAN;
    }

    let ess_multi: f64 = rows.iter().map(|chain| batch_means_ess(chain)).sum();

    let psrf = if chains.len() >= 2 { psrf_multivariate(&rows) } else { f64::NAN };

    Ok(Diagnostics { acceptance_rate, ess_single, ess_multi, psrf })
}

/// Geyer initial-positive-sequence ESS of one scalar series: sum the paired
/// autocovariances Γ_t = γ_{2t} + γ_{2t+1} while they stay positive, then
/// n / τ with τ = 2 ΣΓ_t / γ₀ − 1, truncated to [1, n]. None for a constant
/// series.
fn univariate_ess(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let acov = |k: usize| -> f64 {
        centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let c0 = acov(0);
    if c0 <= 0.0 || !c0.is_finite() {
        return None;
    }
    let mut sum = 0.0;
    let mut t = 0;
    while 2 * t < n {
        let g = acov(2 * t) + if 2 * t + 1 < n { acov(2 * t + 1) } else { 0.0 };
        if g <= 0.0 {
            break;
        }
        sum += g;
        t += 1;
    }
    let tau = (2.0 * sum / c0 - 1.0).max(1.0);
    Some((n as f64 / tau).min(n as f64))
}

/// Multivariate batch-means ESS of one chain:
/// n (det Λ / det Σ_bm)^{1/p} with Λ the sample covariance and Σ_bm the
/// batch-means covariance at batch size ⌊√n⌋. When the batch count cannot
/// support a full-rank Σ_bm (p too large) the determinant ratio degrades to
/// its diagonal version. Truncated to [0, n].
fn batch_means_ess(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let p = rows[0].len();
    let b = (n as f64).sqrt().floor() as usize;
    let a = n / b;
    let used = a * b;
    let mut grand = vec![0.0; p];
    for r in &rows[..used] {
        for (g, v) in grand.iter_mut().zip(r) {
            *g += v;
        }
    }
    for g in &mut grand {
        *g /= used as f64;
    }
    let mut batch_means = vec![vec![0.0; p]; a];
    for (k, bm) in batch_means.iter_mut().enumerate() {
        for r in &rows[k * b..(k + 1) * b] {
            for (m, v) in bm.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in bm.iter_mut() {
            *m /= b as f64;
        }
    }

    if p < a {
        // Full determinant path via log-dets of the two covariance matrices.
        let mut lambda = nalgebra::DMatrix::zeros(p, p);
        for r in &rows[..used] {
            for i in 0..p {
                for j in 0..p {
                    lambda[(i, j)] += (r[i] - grand[i]) * (r[j] - grand[j]);
                }
            }
        }
        lambda /= (used - 1) as f64;
        let mut sbm = nalgebra::DMatrix::zeros(p, p);
        for bm in &batch_means {
            for i in 0..p {
                for j in 0..p {
                    sbm[(i, j)] += (bm[i] - grand[i]) * (bm[j] - grand[j]);
                }
            }
        }
        sbm *= b as f64 / (a - 1) as f64;
        if let (Some(cl), Some(cs)) = (lambda.clone().cholesky(), sbm.clone().cholesky()) {
            let ld_lambda: f64 = cl.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let ld_sbm: f64 = cs.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let ess = used as f64 * ((ld_lambda - ld_sbm) / p as f64).exp();
            return ess.clamp(0.0, n as f64);
        }
    }

    // Diagonal fallback: geometric mean of per-coordinate variance ratios.
    let mut log_ratio = 0.0;
    let mut counted = 0usize;
    for j in 0..p {
        let var: f64 = rows[..used].iter().map(|r| (r[j] - grand[j]).powi(2)).sum::<f64>()
            / (used - 1) as f64;
        let bm_var: f64 = batch_means.iter().map(|bm| (bm[j] - grand[j]).powi(2)).sum::<f64>()
            * b as f64
            / (a - 1) as f64;
        if var > 0.0 && bm_var > 0.0 {
            log_ratio += var.ln() - bm_var.ln();
            counted += 1;
        }
    }
    if counted == 0 {
        return 0.0;
    }
    let ess = used as f64 * (log_ratio / counted as f64).exp();
    ess.clamp(0.0, n as f64)
}

/// Multivariate potential scale reduction factor over m ≥ 2 chains:
/// √((n−1)/n + (m+1)/m · λ₁) with λ₁ the largest eigenvalue of W⁻¹B/n
/// (within-chain covariance W, between-chain covariance of means B/n).
/// Falls back to the maximum univariate factor when W is not positive
/// definite at this sample size.
fn psrf_multivariate(rows: &[Vec<Vec<f64>>]) -> f64 {
    let m = rows.len();
    let n = rows.iter().map(|c| c.len()).min().unwrap();
    let p = rows[0][0].len();
    let nf = n as f64;
    let mf = m as f64;

    let mut chain_means = vec![vec![0.0; p]; m];
    for (c, chain) in rows.iter().enumerate() {
        for r in &chain[..n] {
            for (g, v) in chain_means[c].iter_mut().zip(r) {
                *g += v;
            }
        }
        for g in &mut chain_means[c] {
            *g /= nf;
        }
    }
    let mut grand = vec![0.0; p];
    for cm in &chain_means {
        for (g, v) in grand.iter_mut().zip(cm) {
            *g += v / mf;
        }
    }

    if p < n {
        let mut w = nalgebra::DMatrix::zeros(p, p);
        for (c, chain) in rows.iter().enumerate() {
            for r in &chain[..n] {
                for i in 0..p {
                    for j in 0..p {
                        w[(i, j)] += (r[i] - chain_means[c][i]) * (r[j] - chain_means[c][j]);
                    }
                }
            }
        }
        w /= (mf * (nf - 1.0)) as f64;
        let mut bn = nalgebra::DMatrix::zeros(p, p);
        for cm in &chain_means {
            for i in 0..p {
                for j in 0..p {
                    bn[(i, j)] += (cm[i] - grand[i]) * (cm[j] - grand[j]);
                }
            }
        }
        bn /= mf - 1.0;
        if let Some(chol) = w.clone().cholesky() {
            // λ₁ of W⁻¹B/n through the symmetric form L⁻¹ (B/n) L⁻ᵀ.
            let l = chol.l();
            let inv_l = l.clone().try_inverse().unwrap_or_else(|| l.clone());
            let sym = &inv_l * bn * inv_l.transpose();
            let eig = nalgebra::SymmetricEigen::new(sym);
            let lam = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            return ((nf - 1.0) / nf + (mf + 1.0) / mf * lam.max(0.0)).sqrt();
        }
    }

    // Univariate fallback: max over coordinates with positive within-chain
    // variance.
    let mut worst = f64::NAN;
    for j in 0..p {
        let mut w_j = 0.0;
        for (c, chain) in rows.iter().enumerate() {
            w_j += chain[..n].iter().map(|r| (r[j] - chain_means[c][j]).powi(2)).sum::<f64>()
                / (nf - 1.0);
        }
        w_j /= mf;
        let b_j: f64 =
            chain_means.iter().map(|cm| (cm[j] - grand[j]).powi(2)).sum::<f64>() / (mf - 1.0);
        if w_j > 0.0 {
            let r = ((nf - 1.0) / nf + (mf + 1.0) / mf * b_j / w_j).sqrt();
            if !(r <= worst) {
                worst = r;
            }
        }
    }
    worst
}
