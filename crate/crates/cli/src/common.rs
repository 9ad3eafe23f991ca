//! Shared CLI plumbing: error-to-exit-code mapping, CSV ingestion and small
//! formatting helpers.

use std::fmt::Write as _;
use std::path::Path;

use qtrend_core::model::GridDataset;
use qtrend_core::Error as CoreError;

/// CLI failure classes; `Input` exits 2, `Numerical` exits 3.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NumericalBreakdown { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Read an (x, y) dataset from a headered CSV file.
pub fn read_xy_csv(path: &Path, x_col: &str, y_col: &str) -> CliResult<GridDataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("bad CSV header: {e}")))?
        .clone();
    let x_idx = headers
        .iter()
        .position(|h| h == x_col)
        .ok_or_else(|| CliError::Input(format!("column {x_col:?} not found in header")))?;
    let y_idx = headers
        .iter()
        .position(|h| h == y_col)
        .ok_or_else(|| CliError::Input(format!("column {y_col:?} not found in header")))?;
    let mut pairs = Vec::new();
    let mut bad_rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Input(format!("row {}: {e}", line + 2)))?;
        let x = record.get(x_idx).and_then(|v| v.trim().parse::<f64>().ok());
        let y = record.get(y_idx).and_then(|v| v.trim().parse::<f64>().ok());
        match (x, y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => pairs.push((x, y)),
            _ => bad_rows.push(line + 2),
        }
    }
    if !bad_rows.is_empty() {
        let mut msg = format!(
            "{} malformed row(s) in {}: lines ",
            bad_rows.len(),
            path.display()
        );
        for (i, r) in bad_rows.iter().take(10).enumerate() {
            if i > 0 {
                msg.push_str(", ");
            }
            let _ = write!(msg, "{r}");
        }
        if bad_rows.len() > 10 {
            msg.push_str(", ...");
        }
        return Err(CliError::Input(msg));
    }
    if pairs.is_empty() {
        return Err(CliError::Input(format!(
            "no finite (x, y) rows in {}",
            path.display()
        )));
    }
    Ok(GridDataset::from_pairs(&pairs))
}

/// Parse a comma-separated list of quantile levels.
pub fn parse_quantiles(s: &str) -> CliResult<Vec<f64>> {
    let quantiles: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("bad quantile {t:?}")))
        })
        .collect::<CliResult<_>>()?;
    if quantiles.is_empty() {
        return Err(CliError::Input("need at least one quantile level".into()));
    }
    for &p in &quantiles {
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::Input(format!("quantile {p} outside (0, 1)")));
        }
    }
    Ok(quantiles)
}

/// Compact float formatting for file names: 0.05 -> "0.05".
pub fn format_level(p: f64) -> String {
    let s = format!("{p}");
    s.replace('-', "m")
}
