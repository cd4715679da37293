//! Shared experiment setup: grid, ground truth, observation operator and
//! noisy (optionally normalised) synthetic data.

use crate::config::{ExperimentConfig, NormalizationMode, ObsKind};
use crate::error::{CliError, Result};
use deepgp::fem::{Boundary, Grid, NodalField};
use deepgp::forward::{
    make_mask_operator, make_radon_operator, normalize_observations, uniform_angles,
    ForwardOperator, Normalization, ObservationModel,
};
use deepgp::prior::{DeepGpConfig, DeepGpPrior};
use deepgp::synthetic::{generate_ground_truth, lattice_indices, random_indices};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Everything downstream stages need: the discretisation, the (optional)
/// truth, the forward map and the observation model ready for inference.
pub struct Problem {
    pub grid: Grid,
    pub truth: Option<NodalField>,
    pub forward: ForwardOperator,
    /// Observed node indices for pointwise operators (`None` for Radon).
    pub observed_indices: Option<Vec<usize>>,
    /// Projection angles for Radon operators.
    pub angles: Option<Vec<f64>>,
    pub offsets: usize,
    /// Observations after normalisation, noise level rescaled to match.
    pub model: ObservationModel,
    /// Observations on the raw scale (before normalisation), for artifacts.
    pub raw_observations: Vec<f64>,
}

/// Smallest odd ray count whose span covers the unit square's diagonal.
pub fn auto_offsets(nps: usize) -> usize {
    let mut k = (3 * nps) / 2;
    if k % 2 == 0 {
        k += 1;
    }
    k.max(3)
}

pub fn build_prior_config(cfg: &ExperimentConfig, grid: &Grid) -> Result<DeepGpConfig> {
    let f = deepgp::layer::FTransform::new(cfg.f_minus, cfg.f_plus, cfg.f_a, cfg.f_b)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let prior_cfg = DeepGpConfig {
        num_layers: cfg.num_layers,
        alpha: cfg.alpha,
        base_kappa_sq: cfg.base_kappa_sq,
        f_transform: f,
        sigma_sq: vec![cfg.sigma_sq; cfg.num_layers],
        grid: *grid,
        rational_degree: cfg.rational_degree,
    };
    prior_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(prior_cfg)
}

pub fn build_prior(cfg: &ExperimentConfig, grid: &Grid) -> Result<DeepGpPrior> {
    let prior_cfg = build_prior_config(cfg, grid)?;
    DeepGpPrior::new(prior_cfg).map_err(CliError::from)
}

/// Deterministic synthetic-data pipeline. Observation layout and noise both
/// derive from `cfg.seed`, so a config digest pins the data exactly.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let grid = Grid::new(cfg.experiment.dim(), cfg.grid_size, Boundary::Neumann)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let truth = match cfg.truth_kind()? {
        Some(kind) => Some(generate_ground_truth(kind, &grid)?),
        None => None,
    };

    // Separate streams: layout noise must not shift when n_steps etc. change.
    let mut layout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x0b5e_7a11));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x00d1_5e00));

    let (forward, observed_indices, angles, offsets) = match cfg.obs_kind {
        ObsKind::Lattice => {
            let idx = lattice_indices(&grid, cfg.obs_stride)?;
            (make_mask_operator(&grid, &idx)?, Some(idx), None, 0)
        }
        ObsKind::Random => {
            let count = ((grid.n_nodes() as f64 * cfg.obs_fraction).round() as usize).max(1);
            let idx = random_indices(&grid, count, &mut layout_rng)?;
            (make_mask_operator(&grid, &idx)?, Some(idx), None, 0)
        }
        ObsKind::Full => {
            let idx: Vec<usize> = (0..grid.n_nodes()).collect();
            (make_mask_operator(&grid, &idx)?, Some(idx), None, 0)
        }
        ObsKind::Radon => {
            let angles = uniform_angles(cfg.obs_angles);
            let offsets =
                if cfg.obs_offsets == 0 { auto_offsets(cfg.grid_size) } else { cfg.obs_offsets };
            (make_radon_operator(&grid, &angles, offsets)?, None, Some(angles), offsets)
        }
        ObsKind::None => (make_mask_operator(&grid, &[])?, Some(Vec::new()), None, 0),
    };

    let clean = match &truth {
        Some(t) => forward.apply(&t.values)?,
        None => vec![0.0; forward.m_out()],
    };
    // Additive noise on the raw observation scale; normalisation below
    // rescales the noise level by the same divisor as the data.
    let raw: Vec<f64> = clean
        .iter()
        .map(|&v| v + cfg.noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut noise_rng))
        .collect();

    let mut model = ObservationModel::new(raw.clone(), cfg.noise_std)?;
    match cfg.normalization {
        NormalizationMode::None => {}
        NormalizationMode::MeanStd => {
            if model.d_obs.len() >= 2 {
                normalize_observations(&mut model)?;
                let std = model.normalization.expect("just normalised").std;
                model.noise_std = cfg.noise_std / std;
            }
        }
        NormalizationMode::StdOnly => {
            let m = model.d_obs.len();
            if m >= 2 {
                let mean = model.d_obs.iter().sum::<f64>() / m as f64;
                let var =
                    model.d_obs.iter().map(|&d| (d - mean) * (d - mean)).sum::<f64>() / m as f64;
                let std = var.sqrt();
                if !(std > 0.0) || !std.is_finite() {
                    return Err(CliError::Numeric(
                        "observations have zero or non-finite spread".into(),
                    ));
                }
                for d in &mut model.d_obs {
                    *d /= std;
                }
                model.normalization = Some(Normalization { mean: 0.0, std });
                model.noise_std = cfg.noise_std / std;
            }
        }
    }

    Ok(Problem {
        grid,
        truth,
        forward,
        observed_indices,
        angles,
        offsets,
        model,
        raw_observations: raw,
    })
}

impl Problem {
    /// Diagonal of the noise covariance Γ on the (possibly normalised) scale.
    pub fn gamma_diag(&self) -> Vec<f64> {
        vec![self.model.noise_std * self.model.noise_std; self.forward.m_out()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::resolve_config;

    #[test]
    fn auto_offsets_covers_diagonal() {
        // span = (k-1)·h must exceed the √2 diagonal of the unit square.
        for nps in [16usize, 33, 64, 128] {
            let k = auto_offsets(nps);
            assert_eq!(k % 2, 1);
            let h = 1.0 / (nps - 1) as f64;
            assert!((k - 1) as f64 * h >= std::f64::consts::SQRT_2);
        }
    }

    #[test]
    fn same_seed_reproduces_observations() {
        let cfg = resolve_config("experiment = upsample\ngrid_size = 16\n", &[]).unwrap();
        let a = build_problem(&cfg).unwrap();
        let b = build_problem(&cfg).unwrap();
        assert_eq!(a.raw_observations, b.raw_observations);
        assert_eq!(a.model.d_obs, b.model.d_obs);

        let cfg2 = resolve_config(
            "experiment = upsample\ngrid_size = 16\nseed = 1\n",
            &[],
        )
        .unwrap();
        let c = build_problem(&cfg2).unwrap();
        assert_ne!(a.raw_observations, c.raw_observations);
    }

    #[test]
    fn layout_independent_of_chain_length() {
        let base = resolve_config(
            "experiment = edge_detect\ngrid_size = 16\n",
            &[],
        )
        .unwrap();
        let long = resolve_config(
            "experiment = edge_detect\ngrid_size = 16\nn_steps = 40000\nburn_in = 100\n",
            &[],
        )
        .unwrap();
        let a = build_problem(&base).unwrap();
        let b = build_problem(&long).unwrap();
        assert_eq!(a.observed_indices, b.observed_indices);
        assert_eq!(a.raw_observations, b.raw_observations);
    }

    #[test]
    fn normalization_rescales_noise_level() {
        let cfg = resolve_config("experiment = upsample\ngrid_size = 16\n", &[]).unwrap();
        let p = build_problem(&cfg).unwrap();
        let norm = p.model.normalization.expect("mean_std normalises");
        assert!((p.model.noise_std - cfg.noise_std / norm.std).abs() < 1e-15);
        // Denormalising the normalised data recovers the raw observations.
        let back = p.model.denormalize(&p.model.d_obs);
        for (r, b) in p.raw_observations.iter().zip(&back) {
            assert!((r - b).abs() < 1e-12);
        }
    }

    #[test]
    fn std_only_keeps_zero_level() {
        let cfg = resolve_config(
            "experiment = radon_sparse\ngrid_size = 16\nobs_angles = 8\n",
            &[],
        )
        .unwrap();
        let p = build_problem(&cfg).unwrap();
        let norm = p.model.normalization.unwrap();
        assert_eq!(norm.mean, 0.0);
        let raw_mean: f64 =
            p.raw_observations.iter().sum::<f64>() / p.raw_observations.len() as f64;
        let obs_mean: f64 = p.model.d_obs.iter().sum::<f64>() / p.model.d_obs.len() as f64;
        // Scaling preserves the sign/location of the mean, only shrinks it.
        assert!((obs_mean * norm.std - raw_mean).abs() < 1e-12);
    }

    #[test]
    fn prior_showcase_has_no_observations() {
        let cfg = resolve_config(
            "experiment = prior_showcase\ngrid_size = 16\n",
            &[],
        )
        .unwrap();
        let p = build_problem(&cfg).unwrap();
        assert!(p.truth.is_none());
        assert_eq!(p.forward.m_out(), 0);
        assert!(p.model.d_obs.is_empty());
    }
}
