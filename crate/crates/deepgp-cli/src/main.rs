//! Command-line experiment runner. Exit codes: 0 success, 2 configuration
//! error, 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use deepgp_cli::baseline::run_stationary_baseline;
use deepgp_cli::config::{parse_override, resolve_config, ExperimentConfig, ExperimentKind};
use deepgp_cli::error::{CliError, Result};
use deepgp_cli::experiment::{run_experiment, RepReport};
use deepgp_cli::problem::build_problem;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "deepgp",
    about = "Bayesian image reconstruction with deep Gaussian-process priors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw prior samples and hyper-field maps (no data).
    SamplePrior(RunArgs),
    /// Run a reconstruction experiment end to end.
    Reconstruct(RunArgs),
    /// Run the deep reconstruction plus the stationary Matérn length-scale
    /// sweep it is compared against.
    Baseline(RunArgs),
    /// Edge-detection experiment with classification and F-score output.
    EdgeDetect(RunArgs),
    /// Tomographic (Radon) reconstruction, full or sparse angles.
    Radon(RunArgs),
    /// Convergence diagnostics for saved chain directories.
    Diagnostics(DiagArgs),
    /// Tabulate and verify the rational approximations of λ^(-s).
    RationalCheck(RationalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines ('#' comments allowed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set seed=3 (repeatable, wins over the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory [default: runs/<experiment>-<seed>]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagArgs {
    /// Saved chain directories (each holding header.json / states.bin).
    #[arg(required = true)]
    chains: Vec<PathBuf>,
    /// Also write the summary as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RationalArgs {
    /// Spectral interval lower edge.
    #[arg(long, default_value_t = 50.0)]
    lambda_min: f64,
    /// Spectral interval upper edge.
    #[arg(long, default_value_t = 1e4)]
    lambda_max: f64,
    /// Largest degree to tabulate (starting from 1).
    #[arg(long, default_value_t = 5)]
    max_degree: usize,
    /// Fractional exponents to check (repeatable) [default: 0.25 0.5 0.75]
    #[arg(long = "exponent")]
    exponents: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SamplePrior(a) => {
            run_kind(&a, Some((&[ExperimentKind::PriorShowcase], ExperimentKind::PriorShowcase)))
        }
        Command::Reconstruct(a) => run_kind(&a, None),
        Command::Baseline(a) => baseline(&a),
        Command::EdgeDetect(a) => {
            run_kind(&a, Some((&[ExperimentKind::EdgeDetect], ExperimentKind::EdgeDetect)))
        }
        Command::Radon(a) => run_kind(
            &a,
            Some((
                &[ExperimentKind::RadonFull, ExperimentKind::RadonSparse],
                ExperimentKind::RadonFull,
            )),
        ),
        Command::Diagnostics(a) => diagnostics_cmd(&a),
        Command::RationalCheck(a) => rational_check(&a),
    }
}

/// Loads and validates the configuration for a run-style subcommand,
/// optionally restricting (and defaulting) the experiment kind.
fn load_config(
    args: &RunArgs,
    kind_rule: Option<(&[ExperimentKind], ExperimentKind)>,
) -> Result<ExperimentConfig> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut overrides = Vec::with_capacity(args.set.len() + 1);
    for raw in &args.set {
        overrides.push(parse_override(raw)?);
    }
    if let Some((allowed, default)) = kind_rule {
        let mentioned = overrides.iter().any(|(k, _)| k == "experiment")
            || text.lines().any(|l| {
                let l = l.split('#').next().unwrap_or("");
                l.split_once('=').is_some_and(|(k, _)| k.trim() == "experiment")
            });
        if !mentioned {
            overrides.push(("experiment".into(), default.as_str().into()));
        }
        let cfg = resolve_config(&text, &overrides)?;
        if !allowed.contains(&cfg.experiment) {
            return Err(CliError::Config(format!(
                "this subcommand runs {:?} experiments, config says '{}'",
                allowed.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
                cfg.experiment
            )));
        }
        Ok(cfg)
    } else {
        resolve_config(&text, &overrides)
    }
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", cfg.experiment, cfg.seed)))
}

fn print_reports(cfg: &ExperimentConfig, out: &Path, reports: &[RepReport]) {
    println!("experiment {} -> {}", cfg.experiment, out.display());
    println!("config digest {}", cfg.digest());
    for r in reports {
        let mut line = format!(
            "rep {}: acceptance {:.3}, final beta {:.4}",
            r.rep, r.acceptance_rate, r.final_beta
        );
        if let Some(m) = &r.metrics {
            line.push_str(&format!(
                ", l1 {:.4}, l2 {:.4}, h1 {:.4}, psnr {:.2}, ssim {:.4}",
                m.l1, m.l2, m.h1, m.psnr, m.ssim
            ));
        }
        if let Some(e) = &r.edge {
            line.push_str(&format!(
                ", class err {:.4}, f-score {:.4}",
                e.threshold_error, e.f_score
            ));
        }
        println!("{line}");
    }
}

fn run_kind(
    args: &RunArgs,
    kind_rule: Option<(&[ExperimentKind], ExperimentKind)>,
) -> Result<()> {
    let cfg = load_config(args, kind_rule)?;
    let out = out_dir(args, &cfg);
    let reports = run_experiment(&cfg, &out)?;
    print_reports(&cfg, &out, &reports);
    Ok(())
}

fn baseline(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args, None)?;
    let out = out_dir(args, &cfg);
    let reports = run_experiment(&cfg, &out)?;
    print_reports(&cfg, &out, &reports);

    // Deep-GP reference row: repetition-averaged scores.
    let scored: Vec<&RepReport> = reports.iter().filter(|r| r.metrics.is_some()).collect();
    let deep = if scored.is_empty() {
        None
    } else {
        let k = scored.len() as f64;
        let mut m = deepgp::metrics::MetricReport { l1: 0.0, l2: 0.0, h1: 0.0, psnr: 0.0, ssim: 0.0 };
        let mut thr = 0.0;
        let mut thr_count = 0usize;
        for r in &scored {
            let rm = r.metrics.as_ref().unwrap();
            m.l1 += rm.l1 / k;
            m.l2 += rm.l2 / k;
            m.h1 += rm.h1 / k;
            m.psnr += rm.psnr / k;
            m.ssim += rm.ssim / k;
            if let Some(e) = &r.edge {
                thr += e.threshold_error;
                thr_count += 1;
            }
        }
        let thr = if thr_count > 0 { thr / thr_count as f64 } else { f64::NAN };
        Some((m, thr))
    };

    let problem = build_problem(&cfg)?;
    let sweep = run_stationary_baseline(
        &cfg,
        &problem,
        &out,
        deep.as_ref().map(|(m, t)| (m, *t)),
    )?;
    println!("stationary sweep ({} length scales):", sweep.points.len());
    for p in &sweep.points {
        println!(
            "  rho {:.4}: psi {:.2}, l2 {:.4}, psnr {:.2}, ssim {:.4}",
            p.rho, p.psi, p.metrics.l2, p.metrics.psnr, p.metrics.ssim
        );
    }
    println!(
        "  optimum rho* {:.4}: psi {:.2}, l2 {:.4}, psnr {:.2}, ssim {:.4}",
        sweep.best.rho, sweep.best.psi, sweep.best.metrics.l2, sweep.best.metrics.psnr,
        sweep.best.metrics.ssim
    );
    Ok(())
}

fn diagnostics_cmd(args: &DiagArgs) -> Result<()> {
    let mut chains = Vec::with_capacity(args.chains.len());
    for dir in &args.chains {
        chains.push(deepgp::mcmc::ChainRecord::load(dir)?);
    }
    let first_digest = chains[0].config_digest.clone();
    if chains.iter().any(|c| c.config_digest != first_digest) {
        return Err(CliError::Config(
            "chains were produced by different configurations; diagnostics across them are \
             meaningless"
                .into(),
        ));
    }
    let d = deepgp::mcmc::diagnostics(&chains)?;
    println!("chains: {}", chains.len());
    println!("sampler: {}", chains[0].sampler);
    println!("stored samples per chain: {}", chains[0].states.len());
    println!("acceptance rate: {:.4}", d.acceptance_rate);
    println!("min univariate ESS: {:.1}", d.ess_single);
    println!("multivariate ESS:  {:.1}", d.ess_multi);
    println!("multivariate PSRF: {:.4}", d.psrf);
    if let Some(path) = &args.out {
        deepgp::io::write_csv_table_with_comments(
            path,
            &[&format!("config {first_digest}")],
            &["chains", "acceptance_rate", "ess_single", "ess_multi", "psrf"],
            &[vec![chains.len() as f64, d.acceptance_rate, d.ess_single, d.ess_multi, d.psrf]],
        )?;
    }
    Ok(())
}

/// Sign-alternating local extrema of the relative error on a dense grid;
/// equioscillation at the optimum shows 2k+2 of them.
fn count_alternations(r: &deepgp::rational::RationalApproximation) -> usize {
    let extrema = deepgp::rational::error_extrema(r, 20_001);
    let mut count = 0usize;
    let mut last_sign = 0i8;
    for &(_, e) in &extrema {
        let s = if e > 0.0 { 1i8 } else { -1i8 };
        if s != last_sign {
            count += 1;
            last_sign = s;
        }
    }
    count
}

fn rational_check(args: &RationalArgs) -> Result<()> {
    if !(args.lambda_min > 0.0 && args.lambda_max > args.lambda_min) {
        return Err(CliError::Config("need 0 < lambda_min < lambda_max".into()));
    }
    if args.max_degree == 0 {
        return Err(CliError::Config("max_degree must be at least 1".into()));
    }
    let exponents = if args.exponents.is_empty() {
        vec![0.25, 0.5, 0.75]
    } else {
        for &s in &args.exponents {
            if !(s > 0.0 && s < 1.0) {
                return Err(CliError::Config(format!("exponents must lie in (0,1), got {s}")));
            }
        }
        args.exponents.clone()
    };
    let interval = deepgp::rational::SpectralInterval::new(args.lambda_min, args.lambda_max)
        .map_err(|e| CliError::Config(e.to_string()))?;

    println!(
        "rational approximations of lambda^(-s) on [{}, {}]",
        args.lambda_min, args.lambda_max
    );
    println!("{:>6} {:>3} {:>13} {:>13} {:>11}", "s", "k", "max_error", "scan_error", "extrema");
    let mut failures = Vec::new();
    for &s in &exponents {
        let mut previous = f64::INFINITY;
        for k in 1..=args.max_degree {
            let r = deepgp::rational::brasil_fit(s, &interval, k)?;
            // Independent dense scan of the reported error.
            let mut scan: f64 = 0.0;
            let n = 20_000usize;
            for i in 0..=n {
                let z = interval.lambda_lo
                    * (interval.lambda_hi / interval.lambda_lo).powf(i as f64 / n as f64);
                scan = scan.max(r.relative_error_at(z).abs());
            }
            let alternations = count_alternations(&r);
            println!(
                "{s:>6.2} {k:>3} {:>13.6e} {:>13.6e} {alternations:>11}",
                r.max_error, scan
            );
            if r.max_error >= previous {
                failures.push(format!(
                    "s={s}, k={k}: error {} did not improve on degree {} ({previous})",
                    r.max_error,
                    k - 1
                ));
            }
            if scan > r.max_error * (1.0 + 1e-6) {
                failures.push(format!(
                    "s={s}, k={k}: dense scan found error {scan} above reported {}",
                    r.max_error
                ));
            }
            if alternations < 2 * k + 2 {
                failures.push(format!(
                    "s={s}, k={k}: only {alternations} sign-alternating extrema (need {})",
                    2 * k + 2
                ));
            }
            previous = r.max_error;
        }
    }
    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        for f in &failures {
            eprintln!("check failed: {f}");
        }
        Err(CliError::Numeric(format!("{} rational checks failed", failures.len())))
    }
}
