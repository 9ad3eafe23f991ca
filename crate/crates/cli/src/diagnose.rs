//! The `diagnose` subcommand: per-coordinate autocorrelations, ESS and
//! ESS per second for draws saved by `fit --method gibbs --save-draws`.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use qtrend_core::eval::{autocorrelations, effective_sample_size};

use crate::common::{CliError, CliResult};

#[derive(Args)]
pub struct DiagnoseArgs {
    /// Draws CSV produced by `fit --save-draws`.
    #[arg(long)]
    draws: PathBuf,
    /// Number of monitored coordinates (first/last plus evenly spaced).
    #[arg(long, default_value_t = 3)]
    points: usize,
    /// Largest autocorrelation lag.
    #[arg(long, default_value_t = 50)]
    max_lag: usize,
    /// Sampling wall seconds (from the fit sidecar) for the ESS/sec column.
    #[arg(long)]
    wall_seconds: Option<f64>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: DiagnoseArgs, timing: bool) -> CliResult<()> {
    let mut reader = csv::Reader::from_path(&args.draws)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", args.draws.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("bad draws header: {e}")))?
        .clone();
    let theta_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("theta_"))
        .map(|(i, _)| i)
        .collect();
    if theta_cols.is_empty() {
        return Err(CliError::Input(
            "draws file has no theta_<i> columns; was it saved with --save-draws?".into(),
        ));
    }
    let mut chains: Vec<Vec<f64>> = vec![Vec::new(); theta_cols.len()];
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("bad draws row: {e}")))?;
        for (slot, &col) in chains.iter_mut().zip(&theta_cols) {
            let v: f64 = record
                .get(col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Input("non-numeric draw value".into()))?;
            slot.push(v);
        }
    }
    if chains[0].len() < 10 {
        return Err(CliError::Input(format!(
            "need at least 10 draws, found {}",
            chains[0].len()
        )));
    }

    let n = chains.len();
    let points = args.points.clamp(1, n);
    // evenly spaced coordinate selection including both ends
    let selected: Vec<usize> = if points == 1 {
        vec![0]
    } else {
        (0..points)
            .map(|i| i * (n - 1) / (points - 1))
            .collect()
    };

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(&args.out)?;
    writeln!(f, "coordinate,lag,autocorrelation,ess,ess_per_sec")?;
    for &i in &selected {
        let chain = &chains[i];
        let ess = effective_sample_size(chain)?;
        let ess_per_sec = match (timing, args.wall_seconds) {
            (true, Some(w)) if w > 0.0 => format!("{}", ess / w),
            _ => "0".to_string(),
        };
        let acf = autocorrelations(chain, args.max_lag);
        for (lag, rho) in acf.iter().enumerate() {
            writeln!(
                f,
                "{},{},{},{},{}",
                i + 1,
                lag + 1,
                rho,
                ess,
                ess_per_sec
            )?;
        }
    }
    Ok(())
}
