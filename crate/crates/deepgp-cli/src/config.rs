//! Flat `key = value` experiment configuration. Every experiment kind carries
//! a complete defaults table mirroring the published parameter choices; a
//! config file (and `--set` overrides) only lists deviations. Unknown keys
//! are rejected, and the SHA-256 digest of the resolved configuration is
//! recorded in every artifact.

use crate::error::{CliError, Result};
use deepgp::synthetic::TruthKind;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Upsample,
    Denoise1d,
    EdgeDetect,
    RadonFull,
    RadonSparse,
    PriorShowcase,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Upsample => "upsample",
            ExperimentKind::Denoise1d => "denoise_1d",
            ExperimentKind::EdgeDetect => "edge_detect",
            ExperimentKind::RadonFull => "radon_full",
            ExperimentKind::RadonSparse => "radon_sparse",
            ExperimentKind::PriorShowcase => "prior_showcase",
        }
    }

    /// Spatial dimension of the experiment's domain.
    pub fn dim(&self) -> usize {
        match self {
            ExperimentKind::Denoise1d => 1,
            _ => 2,
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "upsample" => ExperimentKind::Upsample,
            "denoise_1d" => ExperimentKind::Denoise1d,
            "edge_detect" => ExperimentKind::EdgeDetect,
            "radon_full" => ExperimentKind::RadonFull,
            "radon_sparse" => ExperimentKind::RadonSparse,
            "prior_showcase" => ExperimentKind::PriorShowcase,
            other => {
                return Err(CliError::Config(format!(
                    "unknown experiment '{other}' (expected upsample, denoise_1d, edge_detect, \
                     radon_full, radon_sparse or prior_showcase)"
                )))
            }
        })
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    /// Every `obs_stride`-th node per axis.
    Lattice,
    /// `obs_fraction` of the nodes, chosen uniformly without replacement.
    Random,
    /// Identity observation of every node.
    Full,
    /// Parallel-beam sinogram with `obs_angles` angles.
    Radon,
    /// No observations (prior sampling).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    None,
    /// Centre to mean 0, rescale to standard deviation 1.
    MeanStd,
    /// Rescale to standard deviation 1 without centring (keeps the zero
    /// level of sinograms meaningful).
    StdOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerChoice {
    /// Whitened pCN when the sparse Ψ path applies, auxiliary otherwise.
    Auto,
    Pcn,
    PcnAux,
}

/// Fully resolved experiment configuration. Field order is the canonical
/// serialisation order used for the digest.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub grid_size: usize,
    pub alpha: f64,
    pub num_layers: usize,
    pub f_minus: f64,
    pub f_plus: f64,
    pub f_a: f64,
    pub f_b: f64,
    pub base_kappa_sq: f64,
    pub sigma_sq: f64,
    pub noise_std: f64,
    /// Ground-truth image name, or "auto" for the experiment's default.
    pub truth: String,
    pub obs_kind: ObsKind,
    pub obs_stride: usize,
    pub obs_fraction: f64,
    pub obs_angles: usize,
    /// Rays per angle; 0 selects the smallest odd count covering the square.
    pub obs_offsets: usize,
    pub normalization: NormalizationMode,
    pub sampler: SamplerChoice,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub beta0: f64,
    pub adapt_gain: f64,
    pub lsqr_tol: f64,
    pub precond_mode: String,
    pub precond_refresh: usize,
    pub repetitions: usize,
    /// Cap on the stored states used for Rao-Blackwellised posterior means.
    pub posterior_samples: usize,
    pub rational_degree: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_points: usize,
    pub edge_thickness: usize,
}

impl ExperimentConfig {
    /// Published per-experiment parameter table; everything else defaults to
    /// the generic values below.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = ExperimentConfig {
            experiment: kind,
            grid_size: 128,
            alpha: 3.0,
            num_layers: 2,
            f_minus: 50.0,
            f_plus: 1e4,
            f_a: 200.0,
            f_b: 1.0,
            base_kappa_sq: 1500.0,
            sigma_sq: 1.0,
            noise_std: 0.02,
            truth: "auto".into(),
            obs_kind: ObsKind::Lattice,
            obs_stride: 4,
            obs_fraction: 0.02,
            obs_angles: 128,
            obs_offsets: 0,
            normalization: NormalizationMode::MeanStd,
            sampler: SamplerChoice::Auto,
            n_steps: 20_000,
            burn_in: 10_000,
            thinning: 10,
            seed: 0,
            beta0: 0.1,
            adapt_gain: 1.0,
            lsqr_tol: 1e-3,
            precond_mode: "auto".into(),
            precond_refresh: 100,
            repetitions: 1,
            posterior_samples: 200,
            rational_degree: 3,
            rho_min: 0.01,
            rho_max: 0.5,
            rho_points: 12,
            edge_thickness: 6,
        };
        match kind {
            ExperimentKind::Upsample => {}
            ExperimentKind::Denoise1d => {
                c.alpha = 2.0;
                c.noise_std = 0.05;
                c.obs_kind = ObsKind::Full;
            }
            ExperimentKind::EdgeDetect => {
                c.grid_size = 64;
                c.alpha = 2.0;
                c.obs_kind = ObsKind::Random;
                c.obs_fraction = 1.0 / 50.0;
            }
            ExperimentKind::RadonFull => {
                c.obs_kind = ObsKind::Radon;
                c.f_a = 400.0;
                c.lsqr_tol = 1e-4;
                c.precond_refresh = 1000;
                c.normalization = NormalizationMode::StdOnly;
            }
            ExperimentKind::RadonSparse => {
                c.obs_kind = ObsKind::Radon;
                c.obs_angles = 32;
                c.f_a = 100.0;
                c.lsqr_tol = 5e-4;
                c.precond_refresh = 1000;
                c.normalization = NormalizationMode::StdOnly;
            }
            ExperimentKind::PriorShowcase => {
                c.alpha = 4.0;
                c.f_a = 1500.0;
                c.obs_kind = ObsKind::None;
                c.normalization = NormalizationMode::None;
                c.n_steps = 2_000;
                c.burn_in = 1_000;
            }
        }
        c
    }

    /// Truth kind after resolving "auto"; `None` for the prior showcase.
    pub fn truth_kind(&self) -> Result<Option<TruthKind>> {
        if self.experiment == ExperimentKind::PriorShowcase && self.truth == "auto" {
            return Ok(None);
        }
        let name = if self.truth == "auto" {
            match self.experiment {
                ExperimentKind::Upsample => "square_circle",
                ExperimentKind::Denoise1d => "step_1d",
                ExperimentKind::EdgeDetect => "straight_edge",
                ExperimentKind::RadonFull | ExperimentKind::RadonSparse => "shepp_logan",
                ExperimentKind::PriorShowcase => unreachable!(),
            }
        } else {
            self.truth.as_str()
        };
        TruthKind::from_str(name)
            .map(Some)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn precond_mode(&self) -> Result<deepgp::prior::PrecondMode> {
        Ok(match self.precond_mode.as_str() {
            "auto" => deepgp::prior::PrecondMode::Auto,
            "woodbury" => deepgp::prior::PrecondMode::Woodbury,
            "gamma" => deepgp::prior::PrecondMode::Gamma,
            other => {
                return Err(CliError::Config(format!(
                    "unknown precond_mode '{other}' (auto, woodbury or gamma)"
                )))
            }
        })
    }

    /// Whether the whitened-pCN Ψ path is available for this setup.
    pub fn sparse_psi_available(&self) -> bool {
        let s = self.alpha / 2.0;
        let integer_half = (s - s.round()).abs() < 1e-12;
        let sparse_gram = matches!(self.obs_kind, ObsKind::Lattice | ObsKind::Random | ObsKind::Full | ObsKind::None);
        integer_half && sparse_gram
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        let dim = self.experiment.dim();
        if self.grid_size < 4 {
            return fail(format!("grid_size must be at least 4, got {}", self.grid_size));
        }
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1".into());
        }
        if !(self.alpha > dim as f64 / 2.0) {
            return fail(format!("alpha must exceed d/2 = {}", dim as f64 / 2.0));
        }
        if !(self.sigma_sq > 0.0) || !(self.noise_std > 0.0) || !(self.base_kappa_sq > 0.0) {
            return fail("sigma_sq, noise_std and base_kappa_sq must be positive".into());
        }
        deepgp::layer::FTransform::new(self.f_minus, self.f_plus, self.f_a, self.f_b)
            .map_err(|e| CliError::Config(e.to_string()))?;
        match self.obs_kind {
            ObsKind::Lattice if self.obs_stride == 0 => {
                return fail("obs_stride must be positive".into())
            }
            ObsKind::Random if !(self.obs_fraction > 0.0 && self.obs_fraction <= 1.0) => {
                return fail(format!("obs_fraction must lie in (0, 1], got {}", self.obs_fraction))
            }
            ObsKind::Radon if dim != 2 => return fail("radon observations need a 2D grid".into()),
            ObsKind::Radon if self.obs_angles == 0 => {
                return fail("obs_angles must be positive".into())
            }
            _ => {}
        }
        if self.sampler == SamplerChoice::Pcn && !self.sparse_psi_available() {
            return fail(
                "sampler = pcn needs integer alpha/2 and pointwise observations; \
                 use pcn_aux (or auto) for this setup"
                    .into(),
            );
        }
        if self.thinning == 0 {
            return fail("thinning must be positive".into());
        }
        if self.burn_in >= self.n_steps {
            return fail(format!(
                "burn_in {} must be below n_steps {}",
                self.burn_in, self.n_steps
            ));
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return fail(format!("beta0 must lie in (0, 1], got {}", self.beta0));
        }
        if !(self.lsqr_tol > 0.0) {
            return fail("lsqr_tol must be positive".into());
        }
        if self.repetitions == 0 || self.posterior_samples == 0 {
            return fail("repetitions and posterior_samples must be positive".into());
        }
        if !(self.rho_min > 0.0 && self.rho_max > self.rho_min) || self.rho_points < 2 {
            return fail(format!(
                "rho grid needs 0 < rho_min < rho_max and at least 2 points, got \
                 [{}, {}] with {} points",
                self.rho_min, self.rho_max, self.rho_points
            ));
        }
        if self.edge_thickness == 0 {
            return fail("edge_thickness must be positive".into());
        }
        self.truth_kind()?;
        self.precond_mode()?;
        if let Some(kind) = self.truth_kind()? {
            let want = if kind == TruthKind::Step1d { 1 } else { 2 };
            if want != dim {
                return fail(format!(
                    "truth '{}' is {want}D but experiment {} is {dim}D",
                    self.truth, self.experiment
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialisation; recorded in artifacts.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let mut hasher = Sha256::new();
        hasher.update(b"experiment-config v1\n");
        hasher.update(json.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() || value.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key or value", lineno + 1)));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| CliError::Config(format!("key '{key}': cannot parse '{value}'")))
    }
    match key {
        "experiment" => cfg.experiment = value.parse()?,
        "grid_size" => cfg.grid_size = num(key, value)?,
        "alpha" => cfg.alpha = num(key, value)?,
        "num_layers" => cfg.num_layers = num(key, value)?,
        "f_minus" => cfg.f_minus = num(key, value)?,
        "f_plus" => cfg.f_plus = num(key, value)?,
        "f_a" => cfg.f_a = num(key, value)?,
        "f_b" => cfg.f_b = num(key, value)?,
        "base_kappa_sq" => cfg.base_kappa_sq = num(key, value)?,
        "sigma_sq" => cfg.sigma_sq = num(key, value)?,
        "noise_std" => cfg.noise_std = num(key, value)?,
        "truth" => cfg.truth = value.to_string(),
        "obs_kind" => {
            cfg.obs_kind = match value {
                "lattice" => ObsKind::Lattice,
                "random" => ObsKind::Random,
                "full" => ObsKind::Full,
                "radon" => ObsKind::Radon,
                "none" => ObsKind::None,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown obs_kind '{other}' (lattice, random, full, radon or none)"
                    )))
                }
            }
        }
        "obs_stride" => cfg.obs_stride = num(key, value)?,
        "obs_fraction" => cfg.obs_fraction = num(key, value)?,
        "obs_angles" => cfg.obs_angles = num(key, value)?,
        "obs_offsets" => cfg.obs_offsets = num(key, value)?,
        "normalization" => {
            cfg.normalization = match value {
                "none" => NormalizationMode::None,
                "mean_std" => NormalizationMode::MeanStd,
                "std_only" => NormalizationMode::StdOnly,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown normalization '{other}' (none, mean_std or std_only)"
                    )))
                }
            }
        }
        "sampler" => {
            cfg.sampler = match value {
                "auto" => SamplerChoice::Auto,
                "pcn" => SamplerChoice::Pcn,
                "pcn_aux" => SamplerChoice::PcnAux,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown sampler '{other}' (auto, pcn or pcn_aux)"
                    )))
                }
            }
        }
        "n_steps" => cfg.n_steps = num(key, value)?,
        "burn_in" => cfg.burn_in = num(key, value)?,
        "thinning" => cfg.thinning = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "beta0" => cfg.beta0 = num(key, value)?,
        "adapt_gain" => cfg.adapt_gain = num(key, value)?,
        "lsqr_tol" => cfg.lsqr_tol = num(key, value)?,
        "precond_mode" => cfg.precond_mode = value.to_string(),
        "precond_refresh" => cfg.precond_refresh = num(key, value)?,
        "repetitions" => cfg.repetitions = num(key, value)?,
        "posterior_samples" => cfg.posterior_samples = num(key, value)?,
        "rational_degree" => cfg.rational_degree = num(key, value)?,
        "rho_min" => cfg.rho_min = num(key, value)?,
        "rho_max" => cfg.rho_max = num(key, value)?,
        "rho_points" => cfg.rho_points = num(key, value)?,
        "edge_thickness" => cfg.edge_thickness = num(key, value)?,
        other => {
            return Err(CliError::Config(format!("unknown config key '{other}'")));
        }
    }
    Ok(())
}

/// Resolves a configuration from file text plus `--set key=value` overrides.
/// The experiment kind (from either source, overrides winning) selects the
/// defaults table; remaining pairs are applied file-first. Duplicate keys
/// within one source are rejected.
pub fn resolve_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let file_pairs = parse_kv(text)?;
    for pairs in [&file_pairs, &overrides.to_vec()] {
        let mut seen = std::collections::HashSet::new();
        for (k, _) in pairs {
            if !seen.insert(k.clone()) {
                return Err(CliError::Config(format!("duplicate key '{k}'")));
            }
        }
    }
    let kind_str = overrides
        .iter()
        .rev()
        .find(|(k, _)| k == "experiment")
        .or_else(|| file_pairs.iter().find(|(k, _)| k == "experiment"))
        .map(|(_, v)| v.clone())
        .ok_or_else(|| CliError::Config("missing required key 'experiment'".into()))?;
    let kind: ExperimentKind = kind_str.parse()?;
    let mut cfg = ExperimentConfig::defaults(kind);
    for (k, v) in file_pairs.iter().chain(overrides) {
        apply_key(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Splits a raw `key=value` override argument.
pub fn parse_override(raw: &str) -> Result<(String, String)> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => {
            Ok((k.trim().to_string(), v.trim().to_string()))
        }
        _ => Err(CliError::Config(format!("--set expects key=value, got '{raw}'"))),
    }
}
