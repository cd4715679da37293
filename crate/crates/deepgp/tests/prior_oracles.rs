//! Oracle tests for the top-layer covariance machinery: the sampling-map
//! covariance against its sparse precision, the marginal covariance Σ against
//! dense probes, and the pathwise posterior sampler against analytic moments.

mod common;

use common::{dense_from_apply, DenseCholesky, DenseMatrix};
use deepgp::fem::{Boundary, Grid, NodalField};
use deepgp::forward::{make_mask_operator, ForwardOperator};
use deepgp::layer::FTransform;
use deepgp::prior::{
    assemble_precision, build_sparse_preconditioner, DeepGpConfig, DeepGpPrior, PrecondMode,
    TopModel, WhitenedState,
};
use deepgp::synthetic::lattice_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn advanced_prior(nps: usize, alpha: f64, seed: u64) -> DeepGpPrior {
    let grid = Grid::new(2, nps, Boundary::Neumann).unwrap();
    let config = DeepGpConfig {
        num_layers: 2,
        alpha,
        base_kappa_sq: 120.0,
        f_transform: FTransform::new(30.0, 9000.0, 600.0, 1.0).unwrap(),
        sigma_sq: vec![1.0, 1.0],
        grid,
        rational_degree: 0,
    };
    let mut prior = DeepGpPrior::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = WhitenedState::sample(prior.n_noise_layers(), prior.n_dofs(), &mut rng);
    prior.advance_to_state(&w).unwrap();
    prior
}

fn mask_model(prior: &DeepGpPrior, stride: usize, noise_std: f64) -> (ForwardOperator, Vec<f64>) {
    let grid = *prior.top_layer().grid();
    let observed = lattice_indices(&grid, stride).unwrap();
    let forward = make_mask_operator(&grid, &observed).unwrap();
    let gamma = vec![noise_std * noise_std; forward.m_out()];
    (forward, gamma)
}

/// diag contribution Σ = A C Aᵀ + Γ from dense probes of the public apply
/// functions only.
fn dense_sigma(model: &TopModel, gamma: &[f64]) -> DenseMatrix {
    let n = model.forward().n_in();
    let m = model.m();
    let a = dense_from_apply(m, n, |x| model.forward().apply(x).unwrap());
    let c = dense_from_apply(n, n, |v| model.covariance_matvec(v).unwrap());
    let mut sigma = a.matmul(&c).matmul(&a.transpose());
    for i in 0..m {
        sigma.data[i * m + i] += gamma[i];
    }
    sigma
}

#[test]
fn sigma_matvec_matches_dense_probes() {
    let prior = advanced_prior(8, 2.0, 21);
    let (forward, gamma) = mask_model(&prior, 2, 0.3);
    let model = TopModel::new(prior.top_layer(), &forward, gamma.clone()).unwrap();
    let sigma = dense_sigma(&model, &gamma);

    let m = model.m();
    let y: Vec<f64> = (0..m).map(|i| (0.7 * i as f64).sin()).collect();
    let fast = model.sigma_matvec(&y).unwrap();
    let dense = sigma.matvec(&y);
    for (a, b) in fast.iter().zip(&dense) {
        assert!((a - b).abs() < 1e-10, "sigma_matvec {a} vs dense {b}");
    }
}

/// For integer α/2 the assembled sparse precision must invert the covariance
/// realised by the sampling map, with a non-constant κ² from a real hidden
/// layer. Checked densely: P C = I.
#[test]
fn precision_inverts_sampling_covariance() {
    for (alpha, seed) in [(2.0, 31), (4.0, 32)] {
        let prior = advanced_prior(8, alpha, seed);
        let layer = prior.top_layer();
        let n = layer.n_dofs();

        let c = dense_from_apply(n, n, |e| {
            let xi = layer.apply_sampling_map_transpose(e).unwrap();
            layer.apply_sampling_map_dofs(&xi).unwrap()
        });
        let p_sparse = assemble_precision(layer, alpha).unwrap();
        let p = dense_from_apply(n, n, |e| p_sparse.matvec(e));

        let pc = p.matmul(&c);
        let mut max_err: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                max_err = max_err.max((pc.get(i, j) - target).abs());
            }
        }
        assert!(max_err < 1e-8, "alpha {alpha}: max |PC - I| = {max_err:.3e}");
    }
}

#[test]
fn posterior_sampler_matches_analytic_moments() {
    let prior = advanced_prior(8, 2.0, 41);
    let (forward, gamma) = mask_model(&prior, 2, 0.3);
    let model = TopModel::new(prior.top_layer(), &forward, gamma.clone()).unwrap();
    let precond =
        build_sparse_preconditioner(prior.top_layer(), &forward, &gamma, PrecondMode::Auto)
            .unwrap();
    let m = model.m();
    let n = forward.n_in();
    let d_obs: Vec<f64> = (0..m).map(|i| (1.3 * i as f64).sin()).collect();

    let posterior = model.posterior(&d_obs, 1e-9, Some(&precond), 500).unwrap();

    // Dense analytic posterior: mean = C Aᵀ Σ⁻¹ d, cov = C − C Aᵀ Σ⁻¹ A C.
    let a = dense_from_apply(m, n, |x| forward.apply(x).unwrap());
    let c = dense_from_apply(n, n, |v| model.covariance_matvec(v).unwrap());
    let sigma = dense_sigma(&model, &gamma);
    let chol = DenseCholesky::factor(&sigma).unwrap();
    let ca_t = c.matmul(&a.transpose());
    let mean_dense = ca_t.matvec(&chol.solve(&d_obs));
    let sinv_ac = dense_from_apply(m, n, |e| chol.solve(&a.matmul(&c).matvec(e)));
    let cov_dense = {
        let correction = ca_t.matmul(&sinv_ac);
        let mut out = c.clone();
        for k in 0..out.data.len() {
            out.data[k] -= correction.data[k];
        }
        out
    };

    for (i, (have, want)) in posterior.mean.values.iter().zip(&mean_dense).enumerate() {
        assert!((have - want).abs() < 1e-6, "mean[{i}] = {have} vs dense {want}");
    }

    // Matheron draws: Monte Carlo moments against the dense posterior.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n_draws = 3000;
    let draws: Vec<NodalField> =
        (0..n_draws).map(|_| posterior.sample(&mut rng, Some(&precond)).unwrap()).collect();

    for i in 0..n {
        let var_i = cov_dense.get(i, i);
        let mc_mean = draws.iter().map(|d| d.values[i]).sum::<f64>() / n_draws as f64;
        let se_mean = (var_i / n_draws as f64).sqrt();
        assert!(
            (mc_mean - mean_dense[i]).abs() < 5.0 * se_mean + 1e-9,
            "node {i}: MC mean {mc_mean} vs analytic {} (se {se_mean:.2e})",
            mean_dense[i]
        );
        let mc_var = draws
            .iter()
            .map(|d| (d.values[i] - mc_mean).powi(2))
            .sum::<f64>()
            / (n_draws - 1) as f64;
        let se_var = var_i * (2.0 / n_draws as f64).sqrt();
        assert!(
            (mc_var - var_i).abs() < 6.0 * se_var + 1e-9,
            "node {i}: MC var {mc_var} vs analytic {var_i} (se {se_var:.2e})"
        );
    }
}

/// On a fractional-order model the Σ̃ preconditioner has to beat both plain
/// LSQR and the noise-only rescaling, and keep iteration counts in the range
/// that makes the per-step cost of the auxiliary sampler viable.
#[test]
fn preconditioner_cuts_lsqr_iterations() {
    let prior = advanced_prior(12, 3.0, 51);
    let (forward, gamma) = mask_model(&prior, 2, 0.1);
    let model = TopModel::new(prior.top_layer(), &forward, gamma.clone()).unwrap();
    let m = model.m();
    let d_obs: Vec<f64> = (0..m).map(|i| (0.9 * i as f64).cos()).collect();
    let tol = 1e-6;

    let (x_plain, rep_plain) = model.sigma_solve(&d_obs, tol, None, 20_000).unwrap();

    let gamma_pc =
        build_sparse_preconditioner(prior.top_layer(), &forward, &gamma, PrecondMode::Gamma)
            .unwrap();
    assert!(!gamma_pc.is_woodbury());
    let (_, rep_gamma) = model.sigma_solve(&d_obs, tol, Some(&gamma_pc), 20_000).unwrap();

    let wood =
        build_sparse_preconditioner(prior.top_layer(), &forward, &gamma, PrecondMode::Auto)
            .unwrap();
    assert!(wood.is_woodbury());
    let (x_wood, rep_wood) = model.sigma_solve(&d_obs, tol, Some(&wood), 20_000).unwrap();

    // Same solution regardless of the preconditioner.
    let denom = x_plain.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let diff = x_plain
        .iter()
        .zip(&x_wood)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(diff / denom < 1e-3, "preconditioned solution drifted: rel {:.3e}", diff / denom);

    assert!(
        rep_wood.iterations < rep_plain.iterations,
        "woodbury {} vs plain {}",
        rep_wood.iterations,
        rep_plain.iterations
    );
    assert!(
        rep_wood.iterations <= rep_gamma.iterations,
        "woodbury {} vs gamma {}",
        rep_wood.iterations,
        rep_gamma.iterations
    );
    assert!(
        rep_wood.iterations <= 60,
        "woodbury preconditioner left {} iterations at tol {tol}",
        rep_wood.iterations
    );
}
