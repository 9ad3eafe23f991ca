//! Problem-definition types shared by all engines: model specification,
//! dataset container, prior hyperparameters.

use crate::{Error, Result};

/// Shrinkage prior on the penalized trend differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorFamily {
    Horseshoe,
    Laplace,
}

/// Quantile trend-filtering model: quantile level, trend order and prior
/// hyperparameters.
///
/// Defaults follow the weakly informative choice `a_sigma = b_sigma = 0.1`,
/// `c_tau = 1` and `a_w = b_w = 0.1` for the unpenalized boundary weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileModelSpec {
    /// Quantile level in (0, 1).
    pub p: f64,
    /// Trend order k (k = 0 piecewise constant, k = 1 piecewise linear, ...).
    pub k: usize,
    pub prior: PriorFamily,
    /// Inverse-gamma prior on the scale sigma^2.
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Half-Cauchy scale for the global shrinkage parameter (horseshoe only).
    pub c_tau: f64,
    /// Inverse-gamma prior on the boundary weights w_1..w_{k+1}.
    pub a_w: f64,
    pub b_w: f64,
}

impl QuantileModelSpec {
    pub fn new(p: f64, k: usize, prior: PriorFamily) -> Result<Self> {
        let spec = QuantileModelSpec {
            p,
            k,
            prior,
            a_sigma: 0.1,
            b_sigma: 0.1,
            c_tau: 1.0,
            a_w: 0.1,
            b_w: 0.1,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Domain(format!(
                "quantile level {} outside (0, 1)",
                self.p
            )));
        }
        for (name, v) in [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("c_tau", self.c_tau),
            ("a_w", self.a_w),
            ("b_w", self.b_w),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("hyperparameter {name} = {v} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Observations on a strictly increasing grid, possibly several per point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    /// Strictly increasing locations, length n.
    pub x: Vec<f64>,
    /// `y[i]` holds the N_i >= 1 observations at `x[i]`.
    pub y: Vec<Vec<f64>>,
}

impl GridDataset {
    pub fn new(x: Vec<f64>, y: Vec<Vec<f64>>) -> Self {
        GridDataset { x, y }
    }

    /// Build from flat (x, y) pairs; duplicates merge during [`validate`].
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        GridDataset {
            x: pairs.iter().map(|p| p.0).collect(),
            y: pairs.iter().map(|p| vec![p.1]).collect(),
        }
    }

    /// Number of grid points.
    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Total observation count N = sum N_i.
    pub fn total_obs(&self) -> usize {
        self.y.iter().map(|v| v.len()).sum()
    }

    /// True when consecutive spacings match to relative tolerance 1e-9.
    pub fn is_regular(&self) -> bool {
        if self.x.len() < 3 {
            return true;
        }
        let h0 = self.x[1] - self.x[0];
        self.x
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h0).abs() <= 1e-9 * h0.abs().max(1.0))
    }
}

/// Check a (spec, dataset) pair: finite values only, grid sorted with exact
/// duplicates merged into replicated observations, and n > k + 1.
///
/// Idempotent: validating an already validated dataset returns it unchanged.
pub fn validate(spec: &QuantileModelSpec, data: &GridDataset) -> Result<GridDataset> {
    spec.check()?;
    if data.x.len() != data.y.len() {
        return Err(Error::Validation(format!(
            "x has {} entries but y has {} rows",
            data.x.len(),
            data.y.len()
        )));
    }
    if data.x.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    let mut bad = Vec::new();
    for (i, &xi) in data.x.iter().enumerate() {
        if !xi.is_finite() {
            bad.push(format!("x[{i}] = {xi}"));
        }
    }
    for (i, row) in data.y.iter().enumerate() {
        if row.is_empty() {
            bad.push(format!("no observations at location index {i}"));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                bad.push(format!("y[{i}][{j}] = {v}"));
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Validation(format!(
            "non-finite or missing values: {}",
            bad.join(", ")
        )));
    }

    let mut idx: Vec<usize> = (0..data.x.len()).collect();
    idx.sort_by(|&a, &b| data.x[a].partial_cmp(&data.x[b]).unwrap());
    let mut x = Vec::with_capacity(data.x.len());
    let mut y: Vec<Vec<f64>> = Vec::with_capacity(data.y.len());
    for i in idx {
        if x.last() == Some(&data.x[i]) {
            y.last_mut().unwrap().extend_from_slice(&data.y[i]);
        } else {
            x.push(data.x[i]);
            y.push(data.y[i].clone());
        }
    }
    let n = x.len();
    if n <= spec.k + 1 {
        return Err(Error::Validation(format!(
            "need n > k + 1 distinct locations, got n = {n} with k = {}",
            spec.k
        )));
    }
    Ok(GridDataset { x, y })
}

/// Posterior draws from a Gibbs run, plus run provenance.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// Row-major draws x n trend samples.
    pub theta: Vec<f64>,
    pub n: usize,
    pub sigma2: Vec<f64>,
    /// Global shrinkage draws; absent under the Laplace prior (tau^2 = 1).
    pub tau2: Option<Vec<f64>>,
    pub meta: RunMeta,
}

/// Iteration counts, seed and wall-clock time of a sampler run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMeta {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl PosteriorDraws {
    pub fn draws(&self) -> usize {
        self.sigma2.len()
    }

    /// The chain of coordinate `i` across kept draws.
    pub fn theta_column(&self, i: usize) -> Vec<f64> {
        (0..self.draws()).map(|d| self.theta[d * self.n + i]).collect()
    }

    /// Posterior mean of each coordinate.
    pub fn theta_mean(&self) -> Vec<f64> {
        let m = self.draws() as f64;
        let mut out = vec![0.0; self.n];
        for d in 0..self.draws() {
            for i in 0..self.n {
                out[i] += self.theta[d * self.n + i];
            }
        }
        out.iter_mut().for_each(|v| *v /= m);
        out
    }

    /// Per-coordinate empirical quantile (linear interpolation between order
    /// statistics).
    pub fn theta_quantile(&self, q: f64) -> Vec<f64> {
        let m = self.draws();
        let mut out = Vec::with_capacity(self.n);
        let mut col = vec![0.0; m];
        for i in 0..self.n {
            for d in 0..m {
                col[d] = self.theta[d * self.n + i];
            }
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(interp_quantile(&col, q));
        }
        out
    }
}

/// Linear-interpolation quantile of a sorted slice.
pub fn interp_quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = q * (m - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize) -> QuantileModelSpec {
        QuantileModelSpec::new(0.5, k, PriorFamily::Horseshoe).unwrap()
    }

    #[test]
    fn duplicates_merge_into_replicates() {
        let data = GridDataset::new(
            vec![1.0, 2.0, 2.0, 3.0],
            vec![vec![0.1], vec![0.2], vec![0.3], vec![0.4]],
        );
        let v = validate(&spec(0), &data).unwrap();
        assert_eq!(v.n(), 3);
        assert_eq!(v.y[1], vec![0.2, 0.3]);
        assert_eq!(v.total_obs(), 4);
    }

    #[test]
    fn merge_preserves_pair_multiset() {
        let data = GridDataset::from_pairs(&[(3.0, 1.0), (1.0, 2.0), (3.0, 3.0), (2.0, 4.0)]);
        let v = validate(&spec(0), &data).unwrap();
        assert_eq!(v.x, vec![1.0, 2.0, 3.0]);
        let mut pairs: Vec<(f64, f64)> = v
            .x
            .iter()
            .zip(&v.y)
            .flat_map(|(&x, ys)| ys.iter().map(move |&y| (x, y)))
            .collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pairs, vec![(1.0, 2.0), (2.0, 4.0), (3.0, 1.0), (3.0, 3.0)]);
    }

    #[test]
    fn validate_is_idempotent() {
        let data = GridDataset::new(
            vec![2.0, 1.0, 2.0],
            vec![vec![0.5], vec![0.1, 0.2], vec![0.9]],
        );
        let once = validate(&spec(0), &data).unwrap();
        let twice = validate(&spec(0), &once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn too_few_locations() {
        let data = GridDataset::new(vec![1.0, 2.0, 3.0], vec![vec![0.0]; 3]);
        assert!(matches!(validate(&spec(2), &data), Err(Error::Validation(_))));
    }

    #[test]
    fn nan_observation_is_named() {
        let data = GridDataset::new(vec![1.0, 2.0], vec![vec![0.0], vec![f64::NAN]]);
        match validate(&spec(0), &data) {
            Err(Error::Validation(msg)) => assert!(msg.contains("y[1][0]"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = GridDataset::new(vec![], vec![]);
        assert!(validate(&spec(0), &data).is_err());
    }

    #[test]
    fn regular_grid_detection() {
        assert!(GridDataset::new(vec![1.0, 2.0, 3.0], vec![vec![0.0]; 3]).is_regular());
        assert!(!GridDataset::new(vec![1.0, 2.0, 4.0], vec![vec![0.0]; 3]).is_regular());
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(QuantileModelSpec::new(0.0, 0, PriorFamily::Laplace).is_err());
        let mut s = spec(0);
        s.b_sigma = 0.0;
        assert!(s.check().is_err());
    }
}
