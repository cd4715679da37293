//! The reconstruction experiment loop: run one chain per repetition, form
//! Rao-Blackwellised posterior means and hyper-field maps from the stored
//! states, score against the ground truth and write all artifacts (CSV
//! tables tagged with the config digest, plus PGM/PNG renderings).

use crate::config::{ExperimentConfig, ExperimentKind, SamplerChoice};
use crate::error::{CliError, Result};
use crate::problem::{build_prior, build_problem, Problem};
use deepgp::fem::NodalField;
use deepgp::io::{write_csv_table_with_comments, write_pgm, PgmDepth};
use deepgp::mcmc::{diagnostics, run_pcn, run_pcn_aux, ChainRecord, McmcOptions};
use deepgp::metrics::{
    classify_by_threshold, compute_metrics, optimize_fscore_threshold, sobel_intensity,
    uq_classification_maps,
};
use deepgp::prior::{
    build_sparse_preconditioner, default_sigma_max_iter, DeepGpPrior, TopModel, WhitenedState,
};
use deepgp::synthetic::edge_map_from_labels;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fs;
use std::path::Path;

pub fn mcmc_options(cfg: &ExperimentConfig, seed: u64) -> Result<McmcOptions> {
    let opts = McmcOptions {
        n_steps: cfg.n_steps,
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
        beta0: cfg.beta0,
        adapt_gain: cfg.adapt_gain,
        lsqr_tol: cfg.lsqr_tol,
        precond_mode: cfg.precond_mode()?,
        precond_refresh: cfg.precond_refresh,
        seed,
    };
    opts.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(opts)
}

/// Resolves `auto` to the whitened-pCN sampler whenever its sparse Ψ path
/// applies, falling back to the determinant-free auxiliary sampler.
pub fn effective_sampler(cfg: &ExperimentConfig) -> SamplerChoice {
    match cfg.sampler {
        SamplerChoice::Auto => {
            if cfg.sparse_psi_available() {
                SamplerChoice::Pcn
            } else {
                SamplerChoice::PcnAux
            }
        }
        s => s,
    }
}

pub fn run_chain(
    cfg: &ExperimentConfig,
    prior: &mut DeepGpPrior,
    problem: &Problem,
    seed: u64,
) -> Result<ChainRecord> {
    let opts = mcmc_options(cfg, seed)?;
    let record = match effective_sampler(cfg) {
        SamplerChoice::Pcn => run_pcn(prior, &problem.forward, &problem.model, &opts)?,
        _ => run_pcn_aux(prior, &problem.forward, &problem.model, &opts)?,
    };
    Ok(record)
}

/// Evenly spaced indices into `0..n`, at most `cap` of them, always
/// including the final state.
pub fn select_state_indices(n: usize, cap: usize) -> Vec<usize> {
    if n == 0 || cap == 0 {
        return Vec::new();
    }
    if n <= cap {
        return (0..n).collect();
    }
    (1..=cap).map(|j| j * n / cap - 1).collect()
}

/// Posterior summaries computed by conditioning on the stored hidden states:
/// the mixture-of-Gaussians mean, the averaged reaction field κ², the
/// length-scale map it implies, and optional pathwise draws.
pub struct PosteriorSummary {
    pub mean: NodalField,
    pub kappa_sq: NodalField,
    pub rho: NodalField,
    pub path_samples: Vec<NodalField>,
    pub states_used: usize,
}

pub fn summarize_posterior(
    cfg: &ExperimentConfig,
    prior: &mut DeepGpPrior,
    problem: &Problem,
    chain: &ChainRecord,
    n_path: usize,
    seed: u64,
) -> Result<PosteriorSummary> {
    let rows = chain.sample_rows();
    if rows.is_empty() {
        return Err(CliError::Numeric("chain stored no post-burn-in states".into()));
    }
    let idx = select_state_indices(rows.len(), cfg.posterior_samples);
    let n_layers = prior.n_noise_layers();
    let n = prior.n_dofs();
    let mode = cfg.precond_mode()?;
    let gamma = problem.gamma_diag();
    let m = problem.forward.m_out();
    let max_iter = default_sigma_max_iter(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let grid = *prior.top_layer().grid();
    let mut mean_acc = vec![0.0; grid.n_nodes()];
    let mut kappa_acc = vec![0.0; grid.n_nodes()];
    let mut path_samples = Vec::with_capacity(n_path);
    // One preconditioner serves every selected state: staleness only costs
    // LSQR iterations, never accuracy, and the states are all
    // posterior-typical.
    let mut precond = None;
    for (j, &i) in idx.iter().enumerate() {
        let state = WhitenedState::from_flat(n_layers, n, &rows[i])?;
        prior.advance_to_state(&state)?;
        for (acc, &k) in kappa_acc.iter_mut().zip(&prior.top_layer().kappa_sq_field().values) {
            *acc += k;
        }
        // Spread the requested pathwise draws uniformly over the states.
        let quota = (j + 1) * n_path / idx.len() - j * n_path / idx.len();
        if m > 0 {
            if precond.is_none() {
                precond = Some(build_sparse_preconditioner(
                    prior.top_layer(),
                    &problem.forward,
                    &gamma,
                    mode,
                )?);
            }
            let precond = precond.as_ref();
            let model = TopModel::new(prior.top_layer(), &problem.forward, gamma.clone())?;
            let post = model.posterior(&problem.model.d_obs, cfg.lsqr_tol, precond, max_iter)?;
            for (acc, &v) in mean_acc.iter_mut().zip(&post.mean.values) {
                *acc += v;
            }
            for _ in 0..quota {
                path_samples.push(post.sample(&mut rng, precond)?);
            }
        } else {
            // No data: the conditional mean is zero and draws are prior draws.
            for _ in 0..quota {
                let xi: Vec<f64> = (0..prior.top_layer().n_dofs())
                    .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                path_samples.push(prior.top_layer().apply_sampling_map(&xi)?);
            }
        }
    }
    let k = idx.len() as f64;
    for v in mean_acc.iter_mut().chain(kappa_acc.iter_mut()) {
        *v /= k;
    }
    let nu = cfg.alpha - grid.dim as f64 / 2.0;
    let rho: Vec<f64> = kappa_acc.iter().map(|&ksq| (2.0 * nu / ksq).sqrt()).collect();
    Ok(PosteriorSummary {
        mean: NodalField::new(grid, mean_acc)?,
        kappa_sq: NodalField::new(grid, kappa_acc)?,
        rho: NodalField::new(grid, rho)?,
        path_samples,
        states_used: idx.len(),
    })
}

fn write_field_csv(
    path: &Path,
    field: &NodalField,
    value_name: &str,
    comments: &[&str],
) -> Result<()> {
    let grid = field.grid;
    let mut rows = Vec::with_capacity(grid.n_nodes());
    for i in 0..grid.n_nodes() {
        let (x, y) = grid.coords(i);
        match grid.dim {
            1 => rows.push(vec![x, field.values[i]]),
            _ => rows.push(vec![x, y, field.values[i]]),
        }
    }
    let header: Vec<&str> =
        if grid.dim == 1 { vec!["x", value_name] } else { vec!["x", "y", value_name] };
    write_csv_table_with_comments(path, comments, &header, &rows)?;
    Ok(())
}

/// 8-bit grayscale PNG with the same orientation and min/max scaling as the
/// PGM writer (top row = largest y).
fn write_png(path: &Path, field: &NodalField) -> Result<()> {
    let grid = field.grid;
    if grid.dim != 2 {
        return Err(CliError::Config("PNG output needs a 2D field".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &field.values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(CliError::Numeric("non-finite values in image output".into()));
    }
    let nps = grid.nodes_per_side;
    let span = hi - lo;
    let mut buf = Vec::with_capacity(nps * nps);
    for row in 0..nps {
        let iy = nps - 1 - row;
        for ix in 0..nps {
            let v = field.values[grid.node(ix, iy)];
            let t = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
            buf.push((t * 255.0).round() as u8);
        }
    }
    image::save_buffer(path, &buf, nps as u32, nps as u32, image::ExtendedColorType::L8)
        .map_err(|e| CliError::Numeric(format!("png encode: {e}")))?;
    Ok(())
}

/// Writes csv + pgm + png renderings of a field under `dir/name.*`.
fn write_field_artifacts(dir: &Path, name: &str, field: &NodalField, digest: &str) -> Result<()> {
    let comment = format!("config {digest}");
    write_field_csv(&dir.join(format!("{name}.csv")), field, name, &[&comment])?;
    if field.grid.dim == 2 {
        write_pgm(&dir.join(format!("{name}.pgm")), field, PgmDepth::Eight)?;
        write_png(&dir.join(format!("{name}.png")), field)?;
    }
    Ok(())
}

fn write_observations_csv(out: &Path, problem: &Problem, digest: &str) -> Result<()> {
    let comment = format!("config {digest}");
    let rows: Vec<Vec<f64>>;
    let header: Vec<&str>;
    match (&problem.observed_indices, &problem.angles) {
        (Some(idx), _) => {
            header = vec!["node", "x", "y", "d_raw", "d_scaled"];
            rows = idx
                .iter()
                .enumerate()
                .map(|(k, &node)| {
                    let (x, y) = problem.grid.coords(node);
                    vec![
                        node as f64,
                        x,
                        y,
                        problem.raw_observations[k],
                        problem.model.d_obs[k],
                    ]
                })
                .collect();
        }
        (None, Some(angles)) => {
            header = vec!["angle", "offset", "d_raw", "d_scaled"];
            rows = (0..problem.forward.m_out())
                .map(|k| {
                    let a = k / problem.offsets;
                    let j = k % problem.offsets;
                    vec![
                        angles[a],
                        j as f64,
                        problem.raw_observations[k],
                        problem.model.d_obs[k],
                    ]
                })
                .collect();
        }
        (None, None) => unreachable!("operators are pointwise or radon"),
    }
    write_csv_table_with_comments(&out.join("observations.csv"), &[&comment], &header, &rows)?;
    Ok(())
}

/// Per-repetition scores collected for the summary table.
pub struct RepReport {
    pub rep: usize,
    pub metrics: Option<deepgp::metrics::MetricReport>,
    pub acceptance_rate: f64,
    pub final_beta: f64,
    pub edge: Option<EdgeScores>,
}

pub struct EdgeScores {
    pub threshold_error: f64,
    pub f_score: f64,
    pub chosen_threshold: f64,
    pub sweep_error: f64,
}

/// Denormalised copy of a field of reconstruction values.
fn denormalized(problem: &Problem, field: &NodalField) -> Result<NodalField> {
    NodalField::new(field.grid, problem.model.denormalize(&field.values)).map_err(CliError::from)
}

fn edge_scores(
    cfg: &ExperimentConfig,
    problem: &Problem,
    mean_raw: &NodalField,
    path_samples_raw: &[NodalField],
    rep_dir: &Path,
    digest: &str,
) -> Result<EdgeScores> {
    let truth = problem.truth.as_ref().expect("edge experiments have a truth");
    let labels = classify_by_threshold(mean_raw, 0.0);
    let n = labels.len();
    let mismatches = labels
        .values
        .iter()
        .zip(&truth.values)
        .filter(|(a, b)| (*a - *b).abs() > 1e-9)
        .count();
    let threshold_error = mismatches as f64 / n as f64;

    let sobel = sobel_intensity(mean_raw)?;
    // Thickness 2 renders the bare two-pixel interface; the sweep dilates it
    // to the configured band width itself.
    let thin = edge_map_from_labels(truth, 2)?;
    let report = optimize_fscore_threshold(&sobel, &thin, cfg.edge_thickness)?;
    write_field_artifacts(rep_dir, "edge_intensity", &sobel, digest)?;

    if path_samples_raw.len() >= 2 {
        let (uq_mean, uq_var) = uq_classification_maps(path_samples_raw)?;
        write_field_artifacts(rep_dir, "uq_mean", &uq_mean, digest)?;
        write_field_artifacts(rep_dir, "uq_var", &uq_var, digest)?;
    }
    Ok(EdgeScores {
        threshold_error,
        f_score: report.f_score,
        chosen_threshold: report.chosen_threshold,
        sweep_error: report.classification_error,
    })
}

/// Runs the configured experiment end to end, writing artifacts under `out`.
/// Returns the per-repetition reports for callers that print summaries.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RepReport>> {
    fs::create_dir_all(out).map_err(CliError::from)?;
    let digest = cfg.digest();
    fs::write(
        out.join("run.json"),
        format!("{{\n  \"digest\": \"{digest}\",\n  \"config\": {}\n}}\n", cfg.to_json()),
    )
    .map_err(CliError::from)?;

    let problem = build_problem(cfg)?;
    if let Some(truth) = &problem.truth {
        write_field_artifacts(out, "truth", truth, &digest)?;
    }
    if problem.forward.m_out() > 0 {
        write_observations_csv(out, &problem, &digest)?;
    }

    let n_path = match cfg.experiment {
        ExperimentKind::EdgeDetect => 50,
        ExperimentKind::PriorShowcase => 4,
        _ => 0,
    };

    let mut reports = Vec::with_capacity(cfg.repetitions);
    let mut chains = Vec::with_capacity(cfg.repetitions);
    let mut mean_raw_acc: Option<Vec<f64>> = None;
    for rep in 0..cfg.repetitions {
        let rep_dir = out.join(format!("rep_{rep}"));
        fs::create_dir_all(&rep_dir).map_err(CliError::from)?;
        // Chain seeds are offset from the data seed so repetitions differ
        // while the synthetic data stays shared.
        let chain_seed = cfg.seed.wrapping_add(1 + rep as u64);
        let mut prior = build_prior(cfg, &problem.grid)?;
        let chain = run_chain(cfg, &mut prior, &problem, chain_seed)?;
        chain.save(&rep_dir.join("chain"))?;

        let summary = summarize_posterior(
            cfg,
            &mut prior,
            &problem,
            &chain,
            n_path,
            chain_seed.wrapping_add(0x9e37_79b9),
        )?;
        let mean_raw = denormalized(&problem, &summary.mean)?;
        write_field_artifacts(&rep_dir, "mean", &mean_raw, &digest)?;
        write_field_artifacts(&rep_dir, "kappa_sq", &summary.kappa_sq, &digest)?;
        write_field_artifacts(&rep_dir, "rho", &summary.rho, &digest)?;
        if cfg.experiment == ExperimentKind::PriorShowcase {
            for (k, s) in summary.path_samples.iter().enumerate() {
                write_field_artifacts(&rep_dir, &format!("sample_{k}"), s, &digest)?;
            }
        }

        let metrics = match &problem.truth {
            Some(truth) => Some(compute_metrics(&mean_raw, truth)?),
            None => None,
        };
        let edge = if cfg.experiment == ExperimentKind::EdgeDetect {
            let raw_paths: Vec<NodalField> = summary
                .path_samples
                .iter()
                .map(|s| denormalized(&problem, s))
                .collect::<Result<_>>()?;
            Some(edge_scores(cfg, &problem, &mean_raw, &raw_paths, &rep_dir, &digest)?)
        } else {
            None
        };

        let acc = mean_raw_acc.get_or_insert_with(|| vec![0.0; mean_raw.len()]);
        for (a, &v) in acc.iter_mut().zip(&mean_raw.values) {
            *a += v;
        }
        reports.push(RepReport {
            rep,
            metrics,
            acceptance_rate: chain.acceptance_rate(),
            final_beta: chain.beta_final,
            edge,
        });
        chains.push(chain);
    }

    let comment = format!("config {digest}");
    let experiment_comment = format!("experiment {}", cfg.experiment);
    if reports.iter().any(|r| r.metrics.is_some()) {
        let rows: Vec<Vec<f64>> = reports
            .iter()
            .filter_map(|r| {
                r.metrics.as_ref().map(|m| {
                    vec![r.rep as f64, m.l1, m.l2, m.h1, m.psnr, m.ssim, r.acceptance_rate,
                         r.final_beta]
                })
            })
            .collect();
        write_csv_table_with_comments(
            &out.join("metrics.csv"),
            &[&comment, &experiment_comment],
            &["rep", "l1", "l2", "h1", "psnr", "ssim", "acceptance_rate", "final_beta"],
            &rows,
        )?;
    }
    if reports.iter().any(|r| r.edge.is_some()) {
        let rows: Vec<Vec<f64>> = reports
            .iter()
            .filter_map(|r| {
                r.edge.as_ref().map(|e| {
                    vec![
                        r.rep as f64,
                        e.threshold_error,
                        e.f_score,
                        e.chosen_threshold,
                        e.sweep_error,
                    ]
                })
            })
            .collect();
        write_csv_table_with_comments(
            &out.join("edge.csv"),
            &[&comment, &experiment_comment],
            &["rep", "threshold_error", "f_score", "chosen_threshold", "sweep_error"],
            &rows,
        )?;
    }

    if chains[0].states.len() >= 100 {
        let diag = diagnostics(&chains)?;
        write_csv_table_with_comments(
            &out.join("diagnostics.csv"),
            &[&comment],
            &["chains", "acceptance_rate", "ess_single", "ess_multi", "psrf"],
            &[vec![
                chains.len() as f64,
                diag.acceptance_rate,
                diag.ess_single,
                diag.ess_multi,
                diag.psrf,
            ]],
        )?;
    }

    if let Some(mut acc) = mean_raw_acc {
        for v in &mut acc {
            *v /= cfg.repetitions as f64;
        }
        let mean = NodalField::new(problem.grid, acc)?;
        write_field_artifacts(out, "mean", &mean, &digest)?;
    }
    Ok(reports)
}
