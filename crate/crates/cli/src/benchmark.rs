//! The `benchmark` subcommand: replication study driven by a flat
//! key = value config file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use qtrend_core::eval::{
    run_benchmark, BenchmarkConfig, Method, NoiseKind, Scenario, TrendKind,
};
use qtrend_core::gibbs::McmcControl;
use qtrend_core::vb::VbControl;

use crate::common::{CliError, CliResult};

#[derive(Args)]
pub struct BenchmarkArgs {
    /// Flat key = value config file (see README for the keys).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("config line {}: expected key = value", idx + 1)))?;
        map.insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
    }
    Ok(map)
}

fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> CliResult<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<T>()
            .map_err(|_| CliError::Input(format!("config key {key}: bad value {v:?}"))),
    }
}

pub fn build_config(text: &str) -> CliResult<BenchmarkConfig> {
    let map = parse_config(text)?;
    for key in map.keys() {
        const KNOWN: [&str; 13] = [
            "scenarios", "methods", "quantiles", "replications", "n", "order", "seed",
            "iters", "burnin", "thin", "bootstrap", "alpha", "mixed-sd",
        ];
        if !KNOWN.contains(&key.as_str()) {
            return Err(CliError::Input(format!("unknown config key {key:?}")));
        }
    }

    let n: usize = get_parsed(&map, "n", 100)?;
    let seed: u64 = get_parsed(&map, "seed", 1)?;
    let mixed_sd: bool = get_parsed(&map, "mixed-sd", false)?;

    let scenarios: Vec<Scenario> = map
        .get("scenarios")
        .map(|s| s.as_str())
        .unwrap_or("pc:gauss")
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            let (kind, noise) = tok
                .split_once(':')
                .ok_or_else(|| CliError::Input(format!("scenario {tok:?}: expected kind:noise")))?;
            let mut sc = Scenario::new(
                TrendKind::parse(kind)?,
                NoiseKind::parse(noise)?,
                n,
                seed,
            );
            sc.mixed_sd = mixed_sd;
            Ok(sc)
        })
        .collect::<CliResult<_>>()?;

    let methods: Vec<Method> = map
        .get("methods")
        .ok_or_else(|| CliError::Input("config key \"methods\" is required".into()))?
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| Ok(Method::parse(t.trim())?))
        .collect::<CliResult<_>>()?;
    if methods.is_empty() {
        return Err(CliError::Input("config lists no methods".into()));
    }

    let quantiles: Vec<f64> = map
        .get("quantiles")
        .map(|s| s.as_str())
        .unwrap_or("0.05,0.25,0.5,0.75,0.95")
        .split(',')
        .map(|t| {
            let p: f64 = t
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("bad quantile {t:?}")))?;
            if !(p > 0.0 && p < 1.0) {
                return Err(CliError::Input(format!("quantile {p} outside (0, 1)")));
            }
            Ok(p)
        })
        .collect::<CliResult<_>>()?;

    let mut cfg = BenchmarkConfig::new(scenarios, methods, quantiles);
    cfg.replications = get_parsed(&map, "replications", 20)?;
    cfg.seed = seed;
    cfg.mcmc = McmcControl {
        iters: get_parsed(&map, "iters", 80_000)?,
        burnin: get_parsed(&map, "burnin", 5_000)?,
        thin: get_parsed(&map, "thin", 10)?,
    };
    cfg.vb = VbControl::default();
    cfg.bootstrap = get_parsed(&map, "bootstrap", 200)?;
    cfg.alpha = get_parsed(&map, "alpha", 0.05)?;
    cfg.order = match map.get("order").map(|s| s.as_str()) {
        None | Some("auto") => None,
        Some(v) => Some(v.parse::<usize>().map_err(|_| {
            CliError::Input(format!("config key order: bad value {v:?}"))
        })?),
    };
    Ok(cfg)
}

pub fn run(args: BenchmarkArgs, timing: bool) -> CliResult<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", args.config.display())))?;
    let cfg = build_config(&text)?;
    let rows = run_benchmark(&cfg)?;

    // provenance sidecar next to the results table
    let meta = serde_json::json!({
        "scenarios": cfg.scenarios.iter()
            .map(|s| format!("{}:{}", s.kind.name(), s.noise.name()))
            .collect::<Vec<_>>(),
        "methods": cfg.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "quantiles": cfg.quantiles,
        "replications": cfg.replications,
        "n": cfg.scenarios.first().map(|s| s.n),
        "order": cfg.order,
        "seed": cfg.seed,
        "iters": cfg.mcmc.iters,
        "burnin": cfg.mcmc.burnin,
        "thin": cfg.mcmc.thin,
        "bootstrap": cfg.bootstrap,
        "alpha": cfg.alpha,
        "cvb_ess_convention":
            "bootstrap replicate count over total calibration wall seconds",
    });

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(&args.out)?;
    writeln!(
        f,
        "scenario,noise,method,p,mse,mad,mciw,cp,ess_per_sec,wall_seconds,n_fail"
    )?;
    for r in &rows {
        let (ess, wall) = if timing {
            (r.metrics.ess_per_second, r.metrics.wall_seconds)
        } else {
            (0.0, 0.0)
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario.name(),
            r.noise.name(),
            r.method.name(),
            r.p,
            r.metrics.mse,
            r.metrics.mad,
            r.metrics.mciw,
            r.metrics.cp,
            ess,
            wall,
            r.n_fail
        )?;
    }

    let meta_path = args.out.with_extension("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap() + "\n")?;

    // table-style summary on stdout
    println!(
        "{:<10} {:<7} {:<9} {:>6} {:>9} {:>9} {:>9} {:>7} {:>6}",
        "scenario", "noise", "method", "p", "mse", "mad", "mciw", "cp", "fail"
    );
    for r in &rows {
        println!(
            "{:<10} {:<7} {:<9} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>7.3} {:>6}",
            r.scenario.name(),
            r.noise.name(),
            r.method.name(),
            r.p,
            r.metrics.mse,
            r.metrics.mad,
            r.metrics.mciw,
            r.metrics.cp,
            r.n_fail
        );
    }
    Ok(())
}
