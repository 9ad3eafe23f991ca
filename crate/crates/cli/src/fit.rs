//! The `fit` subcommand: CSV in, per-quantile fit tables and a JSON sidecar
//! out.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use qtrend_core::calibrate::{calibrate, CalibrationConfig};
use qtrend_core::diffops::{assemble_d, DifferenceOperator};
use qtrend_core::eval::{derive_seed, effective_sample_size};
use qtrend_core::gibbs::{run_gibbs, McmcControl};
use qtrend_core::model::{validate, GridDataset, PriorFamily, QuantileModelSpec};
use qtrend_core::vb::{vb_fit, vb_interval, VbControl};

use crate::common::{format_level, parse_quantiles, read_xy_csv, CliError, CliResult};

#[derive(Args)]
pub struct FitArgs {
    /// Input CSV with one observation per row.
    #[arg(long)]
    input: PathBuf,
    /// Column holding the locations.
    #[arg(long, default_value = "x")]
    x_col: String,
    /// Column holding the observations.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Comma-separated quantile levels.
    #[arg(long, default_value = "0.5")]
    quantile: String,
    /// Trend order k (0 piecewise constant, 1 piecewise linear, ...).
    #[arg(long, default_value_t = 0)]
    order: usize,
    #[arg(long, default_value = "horseshoe")]
    prior: String,
    /// Inference engine: gibbs, vb or cvb.
    #[arg(long, default_value = "cvb")]
    method: String,
    /// Gibbs scans including burn-in.
    #[arg(long, default_value_t = 80_000)]
    iters: usize,
    #[arg(long, default_value_t = 5_000)]
    burnin: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    /// Bootstrap replicates for cvb.
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    /// Miscoverage level of the reported intervals.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Largest variance-inflation factor on the calibration grid.
    #[arg(long, default_value_t = 400.0)]
    lambda_max: f64,
    /// Number of grid points in the calibration grid.
    #[arg(long, default_value_t = 60)]
    lambda_points: usize,
    /// Convergence tolerance of the variational fit.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Treat the grid as regular even when spacings vary.
    #[arg(long)]
    force_regular: bool,
    /// Save the kept Gibbs draws next to the fit table.
    #[arg(long)]
    save_draws: bool,
    /// Inverse-gamma prior on sigma^2.
    #[arg(long, default_value_t = 0.1)]
    a_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    b_sigma: f64,
    /// Half-Cauchy scale of the global shrinkage parameter.
    #[arg(long, default_value_t = 1.0)]
    c_tau: f64,
    /// Inverse-gamma prior on the boundary weights.
    #[arg(long, default_value_t = 0.1)]
    a_w: f64,
    #[arg(long, default_value_t = 0.1)]
    b_w: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct QuantileMeta {
    p: f64,
    seed: u64,
    converged: bool,
    iterations: Option<usize>,
    ess_mean: Option<f64>,
    dropped_bootstrap: Option<usize>,
    wall_seconds: f64,
    warning: Option<String>,
}

#[derive(Serialize)]
struct FitMeta {
    input: String,
    method: String,
    prior: String,
    order: usize,
    alpha: f64,
    seed: u64,
    n: usize,
    n_obs: usize,
    irregular_grid: bool,
    a_sigma: f64,
    b_sigma: f64,
    c_tau: f64,
    a_w: f64,
    b_w: f64,
    quantiles: Vec<QuantileMeta>,
}

struct FitOutput {
    estimate: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Per-coordinate inflation factors; None for the sampler.
    lambda: Option<Vec<f64>>,
    meta: QuantileMeta,
    draws: Option<qtrend_core::model::PosteriorDraws>,
}

pub fn run(args: FitArgs, timing: bool) -> CliResult<()> {
    let quantiles = parse_quantiles(&args.quantile)?;
    let prior = match args.prior.to_ascii_lowercase().as_str() {
        "horseshoe" | "hs" => PriorFamily::Horseshoe,
        "laplace" | "lap" => PriorFamily::Laplace,
        other => return Err(CliError::Input(format!("unknown prior {other:?}"))),
    };
    let raw = read_xy_csv(&args.input, &args.x_col, &args.y_col)?;
    let mut spec_proto = QuantileModelSpec::new(0.5, args.order, prior)?;
    spec_proto.a_sigma = args.a_sigma;
    spec_proto.b_sigma = args.b_sigma;
    spec_proto.c_tau = args.c_tau;
    spec_proto.a_w = args.a_w;
    spec_proto.b_w = args.b_w;
    spec_proto.check()?;
    let data = validate(&spec_proto, &raw)?;

    let irregular = !args.force_regular && args.order >= 1 && !data.is_regular();
    let d = if irregular {
        assemble_d(data.n(), args.order, Some(&data.x))?
    } else {
        assemble_d(data.n(), args.order, None)?
    };

    fs::create_dir_all(&args.out)?;
    let mut metas = Vec::new();
    for (idx, &p) in quantiles.iter().enumerate() {
        let spec = QuantileModelSpec { p, ..spec_proto };
        spec.check()?;
        let stream_seed = derive_seed(args.seed, idx as u64);
        let output = fit_one(&args, &spec, &data, &d, stream_seed, timing)?;
        write_fit_table(&args, p, &data, &output)?;
        if let Some(draws) = &output.draws {
            write_draws(&args, p, draws)?;
        }
        if !output.meta.converged {
            eprintln!("warning: fit at p = {p} did not converge; see sidecar");
        }
        metas.push(output.meta);
    }

    let meta = FitMeta {
        input: args.input.display().to_string(),
        method: args.method.to_ascii_lowercase(),
        prior: args.prior.to_ascii_lowercase(),
        order: args.order,
        alpha: args.alpha,
        seed: args.seed,
        n: data.n(),
        n_obs: data.total_obs(),
        irregular_grid: irregular,
        a_sigma: args.a_sigma,
        b_sigma: args.b_sigma,
        c_tau: args.c_tau,
        a_w: args.a_w,
        b_w: args.b_w,
        quantiles: metas,
    };
    let sidecar = args.out.join("fit_meta.json");
    fs::write(&sidecar, serde_json::to_string_pretty(&meta).unwrap() + "\n")?;
    Ok(())
}

fn fit_one(
    args: &FitArgs,
    spec: &QuantileModelSpec,
    data: &GridDataset,
    d: &DifferenceOperator,
    seed: u64,
    timing: bool,
) -> CliResult<FitOutput> {
    let vb_ctrl = VbControl { tol: args.tol, max_iters: args.max_iters };
    match args.method.to_ascii_lowercase().as_str() {
        "gibbs" => {
            let ctrl = McmcControl {
                iters: args.iters,
                burnin: args.burnin,
                thin: args.thin,
            };
            let draws = run_gibbs(spec, data, d, &ctrl, seed)?;
            let estimate = draws.theta_mean();
            let lower = draws.theta_quantile(args.alpha / 2.0);
            let upper = draws.theta_quantile(1.0 - args.alpha / 2.0);
            let mut ess_sum = 0.0;
            for i in 0..data.n() {
                ess_sum += effective_sample_size(&draws.theta_column(i))?;
            }
            let meta = QuantileMeta {
                p: spec.p,
                seed,
                converged: true,
                iterations: None,
                ess_mean: Some(ess_sum / data.n() as f64),
                dropped_bootstrap: None,
                wall_seconds: if timing { draws.meta.wall_seconds } else { 0.0 },
                warning: None,
            };
            Ok(FitOutput {
                estimate,
                lower,
                upper,
                lambda: None,
                meta,
                draws: args.save_draws.then_some(draws),
            })
        }
        "vb" => {
            let state = vb_fit(spec, data, d, &vb_ctrl, None)?;
            let lambda = vec![1.0; data.n()];
            let intervals = vb_interval(&state, args.alpha, &lambda)?;
            let (lower, upper) = intervals.into_iter().unzip();
            let meta = QuantileMeta {
                p: spec.p,
                seed,
                converged: state.converged,
                iterations: Some(state.iterations),
                ess_mean: None,
                dropped_bootstrap: None,
                wall_seconds: if timing { state.wall_seconds } else { 0.0 },
                warning: (!state.converged)
                    .then(|| "variational fit hit the iteration cap".to_string()),
            };
            Ok(FitOutput {
                estimate: state.mu.clone(),
                lower,
                upper,
                lambda: Some(lambda),
                meta,
                draws: None,
            })
        }
        "cvb" => {
            let cfg = CalibrationConfig {
                bootstrap: args.bootstrap,
                alpha: args.alpha,
                lambda_grid: geometric_grid(args.lambda_max, args.lambda_points)?,
                seed,
                ..CalibrationConfig::default()
            };
            let post = calibrate(spec, data, d, &vb_ctrl, &cfg)?;
            let (lower, upper) = post.intervals.iter().cloned().unzip();
            let meta = QuantileMeta {
                p: spec.p,
                seed,
                converged: post.fit.converged,
                iterations: Some(post.fit.iterations),
                ess_mean: None,
                dropped_bootstrap: Some(post.dropped),
                wall_seconds: if timing { post.wall_seconds } else { 0.0 },
                warning: (post.dropped > 0)
                    .then(|| format!("{} bootstrap fits dropped", post.dropped)),
            };
            Ok(FitOutput {
                estimate: post.mu_star,
                lower,
                upper,
                lambda: Some(post.lambda_hat),
                meta,
                draws: None,
            })
        }
        other => Err(CliError::Input(format!("unknown method {other:?}"))),
    }
}

fn write_fit_table(
    args: &FitArgs,
    p: f64,
    data: &GridDataset,
    out: &FitOutput,
) -> CliResult<()> {
    let path = args.out.join(format!("fit_p{}.csv", format_level(p)));
    let mut f = fs::File::create(&path)?;
    writeln!(f, "x,n_obs,p,estimate,lower,upper,lambda_hat")?;
    for i in 0..data.n() {
        let lambda = match &out.lambda {
            Some(l) => format!("{}", l[i]),
            None => String::new(),
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            data.x[i],
            data.y[i].len(),
            p,
            out.estimate[i],
            out.lower[i],
            out.upper[i],
            lambda
        )?;
    }
    Ok(())
}

fn write_draws(
    args: &FitArgs,
    p: f64,
    draws: &qtrend_core::model::PosteriorDraws,
) -> CliResult<()> {
    let path = args.out.join(format!("draws_p{}.csv", format_level(p)));
    let mut f = fs::File::create(&path)?;
    let mut header = String::from("draw");
    for i in 1..=draws.n {
        header.push_str(&format!(",theta_{i}"));
    }
    writeln!(f, "{header}")?;
    for d in 0..draws.draws() {
        let mut line = format!("{}", d + 1);
        for i in 0..draws.n {
            line.push_str(&format!(",{}", draws.theta[d * draws.n + i]));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

fn geometric_grid(top: f64, points: usize) -> CliResult<Vec<f64>> {
    if !(top > 1.0) || points < 2 {
        return Err(CliError::Input(
            "lambda grid needs top > 1 and at least 2 points".into(),
        ));
    }
    Ok((0..points)
        .map(|i| {
            if i == 0 {
                1.0
            } else {
                top.powf(i as f64 / (points - 1) as f64)
            }
        })
        .collect())
}
