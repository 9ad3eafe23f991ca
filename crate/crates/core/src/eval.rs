//! Simulation scenarios, true-quantile oracles, evaluation metrics, ESS
//! diagnostics and the replication benchmark driver.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::calibrate::{calibrate, CalibrationConfig};
use crate::diffops::assemble_d;
use crate::gibbs::{run_gibbs, McmcControl};
use crate::model::{validate, GridDataset, PriorFamily, QuantileModelSpec};
use crate::specfun::{norm_cdf, norm_quantile};
use crate::vb::{vb_fit, vb_interval, VbControl};
use crate::{Error, Result};

/// Trend shape of a simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendKind {
    /// Four-level step function on integer locations.
    Pc,
    /// Smooth trend with a sharp local feature, on x = i/n.
    Vs,
    /// Draw from a squared-exponential Gaussian process, on x = i/n.
    Gp,
}

impl TrendKind {
    /// Trend order used in the simulation studies.
    pub fn default_order(self) -> usize {
        match self {
            TrendKind::Pc => 0,
            TrendKind::Vs => 1,
            TrendKind::Gp => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pc" => Ok(TrendKind::Pc),
            "vs" => Ok(TrendKind::Vs),
            "gp" => Ok(TrendKind::Gp),
            other => Err(Error::Domain(format!("unknown scenario kind {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrendKind::Pc => "pc",
            TrendKind::Vs => "vs",
            TrendKind::Gp => "gp",
        }
    }
}

/// Location-dependent noise family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// `N(0, {(1 + x^2)/4}^2)`.
    Gauss,
    /// `Beta(1, 11 - 10x)`.
    Beta,
    /// `x N(-0.2, 0.5) + (1 - x) N(0.2, 0.5)`.
    MixedNormal,
}

impl NoiseKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gauss" | "gaussian" => Ok(NoiseKind::Gauss),
            "beta" => Ok(NoiseKind::Beta),
            "mixed" | "mixednormal" | "mixed-normal" => Ok(NoiseKind::MixedNormal),
            other => Err(Error::Domain(format!("unknown noise kind {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gauss => "gauss",
            NoiseKind::Beta => "beta",
            NoiseKind::MixedNormal => "mixed",
        }
    }
}

/// GP trend hyperparameters (mean, signal variance, length scale on the
/// integer index grid).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpParams {
    pub mu: f64,
    pub sigma_f2: f64,
    pub rho: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        GpParams { mu: 2.0, sigma_f2: 1.0, rho: 10.0 }
    }
}

/// A simulation scenario: trend kind, noise law, grid size and the seed
/// that fixes the GP trend draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: TrendKind,
    pub noise: NoiseKind,
    pub n: usize,
    pub seed: u64,
    pub gp: GpParams,
    /// Read the mixed-normal "0.5" as a variance (the default) or as a
    /// standard deviation.
    pub mixed_sd: bool,
}

impl Scenario {
    pub fn new(kind: TrendKind, noise: NoiseKind, n: usize, seed: u64) -> Self {
        Scenario { kind, noise, n, seed, gp: GpParams::default(), mixed_sd: false }
    }

    fn mixed_component_sd(&self) -> f64 {
        if self.mixed_sd {
            0.5
        } else {
            0.5f64.sqrt()
        }
    }
}

/// True trend values and the fitting locations.
///
/// The step trend lives on integer locations `1..=n` with levels 2.5, 1,
/// 3.5, 1.5 on the first 20%, next 20%, next 20% and final 40% of the grid;
/// the smooth trends live on `x = i/n`. The GP trend is drawn once per
/// scenario seed.
pub fn gen_truth(scenario: &Scenario) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = scenario.n;
    if n < 4 {
        return Err(Error::InvalidDimension(format!("need n >= 4, got {n}")));
    }
    match scenario.kind {
        TrendKind::Pc => {
            let x: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let f = x
                .iter()
                .map(|&xi| {
                    let frac = xi / n as f64;
                    if frac <= 0.2 {
                        2.5
                    } else if frac <= 0.4 {
                        1.0
                    } else if frac <= 0.6 {
                        3.5
                    } else {
                        1.5
                    }
                })
                .collect();
            Ok((x, f))
        }
        TrendKind::Vs => {
            let x: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
            let f = x
                .iter()
                .map(|&xi| {
                    let u = 4.0 * xi - 2.0;
                    2.0 + u.sin() + 2.0 * (-30.0 * u * u).exp()
                })
                .collect();
            Ok((x, f))
        }
        TrendKind::Gp => {
            let x: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
            let GpParams { mu, sigma_f2, rho } = scenario.gp;
            if sigma_f2 == 0.0 {
                return Ok((x, vec![mu; n]));
            }
            // dense Cholesky of the squared-exponential kernel on t = 1..n
            let mut cov = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let dt = (i as f64) - (j as f64);
                    cov[i][j] = sigma_f2 * (-dt * dt / (2.0 * rho * rho)).exp();
                }
                cov[i][i] += 1e-10;
            }
            let mut l = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..=i {
                    let mut s = cov[i][j];
                    for r in 0..j {
                        s -= l[i][r] * l[j][r];
                    }
                    if i == j {
                        l[i][j] = s.max(1e-300).sqrt();
                    } else {
                        l[i][j] = s / l[j][j];
                    }
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
            let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let f = (0..n)
                .map(|i| mu + (0..=i).map(|r| l[i][r] * eps[r]).sum::<f64>())
                .collect();
            Ok((x, f))
        }
    }
}

/// One noise draw at normalized location `x` in (0, 1].
pub fn gen_noise<R: Rng + ?Sized>(scenario: &Scenario, x: f64, rng: &mut R) -> Result<f64> {
    match scenario.noise {
        NoiseKind::Gauss => {
            let sd = (1.0 + x * x) / 4.0;
            Ok(sd * rng.sample::<f64, _>(StandardNormal))
        }
        NoiseKind::Beta => {
            let b = 11.0 - 10.0 * x;
            let beta = Beta::new(1.0, b)
                .map_err(|e| Error::Domain(format!("beta sampler: {e}")))?;
            Ok(beta.sample(rng))
        }
        NoiseKind::MixedNormal => {
            let sd = scenario.mixed_component_sd();
            let u: f64 = rng.random();
            let mean = if u < x { -0.2 } else { 0.2 };
            Ok(mean + sd * rng.sample::<f64, _>(StandardNormal))
        }
    }
}

/// The p-th quantile of the noise law at normalized location `x`.
pub fn noise_quantile(scenario: &Scenario, x: f64, p: f64) -> Result<f64> {
    match scenario.noise {
        NoiseKind::Gauss => Ok((1.0 + x * x) / 4.0 * norm_quantile(p)?),
        NoiseKind::Beta => {
            let b = 11.0 - 10.0 * x;
            Ok(1.0 - (1.0 - p).powf(1.0 / b))
        }
        NoiseKind::MixedNormal => {
            let sd = scenario.mixed_component_sd();
            let cdf = |q: f64| {
                x * norm_cdf((q + 0.2) / sd) + (1.0 - x) * norm_cdf((q - 0.2) / sd)
            };
            let (mut lo, mut hi) = (-20.0, 20.0);
            while hi - lo > 1e-10 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// True quantile trend `f(x) + Q_noise(p; x)` at every grid point.
pub fn true_quantiles(scenario: &Scenario, p: f64) -> Result<Vec<f64>> {
    let (_, f) = gen_truth(scenario)?;
    let n = scenario.n;
    (0..n)
        .map(|i| {
            let xn = (i + 1) as f64 / n as f64;
            Ok(f[i] + noise_quantile(scenario, xn, p)?)
        })
        .collect()
}

/// Generate one replication: locations and noisy observations (one per grid
/// point), using the normalized location for the noise law.
pub fn gen_dataset(scenario: &Scenario, rep_seed: u64) -> Result<GridDataset> {
    let (x, f) = gen_truth(scenario)?;
    let n = scenario.n;
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let xn = (i + 1) as f64 / n as f64;
        y.push(vec![f[i] + gen_noise(scenario, xn, &mut rng)?]);
    }
    Ok(GridDataset::new(x, y))
}

/// Point-estimate and interval metrics of one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub mse: f64,
    pub mad: f64,
    pub mciw: f64,
    pub cp: f64,
    /// Effective samples per second (0 when not applicable).
    pub ess_per_second: f64,
    pub wall_seconds: f64,
}

/// MSE, MAD, MCIW and CP of a point estimate with pointwise intervals
/// against the true quantile trend.
pub fn compute_metrics(
    point_est: &[f64],
    lo: &[f64],
    hi: &[f64],
    truth: &[f64],
) -> Result<MetricsRecord> {
    let n = truth.len();
    if point_est.len() != n || lo.len() != n || hi.len() != n {
        return Err(Error::InvalidDimension(format!(
            "metric inputs must share length {n}"
        )));
    }
    let mut mse = 0.0;
    let mut mad = 0.0;
    let mut mciw = 0.0;
    let mut cp = 0.0;
    for i in 0..n {
        let e = truth[i] - point_est[i];
        mse += e * e;
        mad += e.abs();
        mciw += hi[i] - lo[i];
        if lo[i] <= truth[i] && truth[i] <= hi[i] {
            cp += 1.0;
        }
    }
    let nf = n as f64;
    Ok(MetricsRecord {
        mse: mse / nf,
        mad: mad / nf,
        mciw: mciw / nf,
        cp: cp / nf,
        ess_per_second: 0.0,
        wall_seconds: 0.0,
    })
}

/// Effective sample size by Geyer's initial positive sequence: autocovariance
/// pair sums are accumulated while positive, and `ESS = M / (1 + 2 sum rho_t)`
/// clipped to `(0, M]`. A constant chain returns `M`.
pub fn effective_sample_size(chain: &[f64]) -> Result<f64> {
    let m = chain.len();
    if m < 10 {
        return Err(Error::InvalidDimension(format!(
            "need at least 10 draws for ESS, got {m}"
        )));
    }
    let mf = m as f64;
    let mean = chain.iter().sum::<f64>() / mf;
    let gamma = |t: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..m - t {
            s += (chain[i] - mean) * (chain[i + t] - mean);
        }
        s / mf
    };
    let g0 = gamma(0);
    // treat rounding-level variance as a constant chain
    let scale = chain.iter().map(|v| v * v).sum::<f64>() / mf;
    if g0 <= scale * 1e-28 + f64::MIN_POSITIVE {
        return Ok(mf);
    }
    // pair sums Gamma_k = gamma_{2k} + gamma_{2k+1}, truncated at the first
    // nonpositive pair
    let mut acov_sum = 0.0; // sum of gamma_t for t >= 1 over kept pairs
    let mut t = 1;
    loop {
        if t + 1 > m - 1 {
            break;
        }
        let pair = gamma(t) + gamma(t + 1);
        if pair <= 0.0 {
            break;
        }
        acov_sum += pair;
        t += 2;
    }
    let tau = 1.0 + 2.0 * acov_sum / g0;
    Ok((mf / tau).clamp(f64::MIN_POSITIVE, mf))
}

/// Lag-t autocorrelations of a chain, for diagnostics output.
pub fn autocorrelations(chain: &[f64], max_lag: usize) -> Vec<f64> {
    let m = chain.len();
    let mf = m as f64;
    let mean = chain.iter().sum::<f64>() / mf;
    let mut g0 = 0.0;
    for v in chain {
        g0 += (v - mean) * (v - mean);
    }
    g0 /= mf;
    (1..=max_lag.min(m - 1))
        .map(|t| {
            if g0 <= 0.0 {
                return 0.0;
            }
            let mut s = 0.0;
            for i in 0..m - t {
                s += (chain[i] - mean) * (chain[i + t] - mean);
            }
            s / mf / g0
        })
        .collect()
}

/// Inference method compared in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    McmcHs,
    McmcLap,
    VbHs,
    VbLap,
    CvbHs,
    CvbLap,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcmc-hs" => Ok(Method::McmcHs),
            "mcmc-lap" => Ok(Method::McmcLap),
            "vb-hs" => Ok(Method::VbHs),
            "vb-lap" => Ok(Method::VbLap),
            "cvb-hs" => Ok(Method::CvbHs),
            "cvb-lap" => Ok(Method::CvbLap),
            other => Err(Error::Domain(format!("unknown method {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::McmcHs => "mcmc-hs",
            Method::McmcLap => "mcmc-lap",
            Method::VbHs => "vb-hs",
            Method::VbLap => "vb-lap",
            Method::CvbHs => "cvb-hs",
            Method::CvbLap => "cvb-lap",
        }
    }

    pub fn prior(self) -> PriorFamily {
        match self {
            Method::McmcHs | Method::VbHs | Method::CvbHs => PriorFamily::Horseshoe,
            Method::McmcLap | Method::VbLap | Method::CvbLap => PriorFamily::Laplace,
        }
    }
}

/// Benchmark configuration: the cross product of scenarios, methods and
/// quantile levels, averaged over replications with derived seeds.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub quantiles: Vec<f64>,
    pub replications: usize,
    /// Trend order; `None` takes the scenario default (0/1/2 for PC/VS/GP).
    pub order: Option<usize>,
    pub seed: u64,
    pub mcmc: McmcControl,
    pub vb: VbControl,
    pub bootstrap: usize,
    pub alpha: f64,
}

impl BenchmarkConfig {
    pub fn new(scenarios: Vec<Scenario>, methods: Vec<Method>, quantiles: Vec<f64>) -> Self {
        BenchmarkConfig {
            scenarios,
            methods,
            quantiles,
            replications: 20,
            order: None,
            seed: 1,
            mcmc: McmcControl::default(),
            vb: VbControl::default(),
            bootstrap: 200,
            alpha: 0.05,
        }
    }
}

/// One row of the benchmark table: metrics averaged over replications.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub scenario: TrendKind,
    pub noise: NoiseKind,
    pub method: Method,
    pub p: f64,
    pub metrics: MetricsRecord,
    pub n_fail: usize,
}

/// SplitMix64, used to derive independent replication seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct RepOutcome {
    metrics: MetricsRecord,
}

fn run_method_once(
    cfg: &BenchmarkConfig,
    scenario: &Scenario,
    method: Method,
    p: f64,
    data: &GridDataset,
    truth: &[f64],
    rep_seed: u64,
) -> Result<RepOutcome> {
    let k = cfg.order.unwrap_or_else(|| scenario.kind.default_order());
    let spec = QuantileModelSpec::new(p, k, method.prior())?;
    let data = validate(&spec, data)?;
    let d = assemble_d(data.n(), k, None)?;
    let z_alpha = 1.0 - cfg.alpha / 2.0;
    match method {
        Method::McmcHs | Method::McmcLap => {
            let draws = run_gibbs(&spec, &data, &d, &cfg.mcmc, rep_seed)?;
            let est = draws.theta_mean();
            let lo = draws.theta_quantile(cfg.alpha / 2.0);
            let hi = draws.theta_quantile(z_alpha);
            let mut metrics = compute_metrics(&est, &lo, &hi, truth)?;
            let mut ess_sum = 0.0;
            for i in 0..data.n() {
                ess_sum += effective_sample_size(&draws.theta_column(i))?;
            }
            metrics.wall_seconds = draws.meta.wall_seconds;
            metrics.ess_per_second =
                ess_sum / data.n() as f64 / draws.meta.wall_seconds.max(1e-12);
            Ok(RepOutcome { metrics })
        }
        Method::VbHs | Method::VbLap => {
            let state = vb_fit(&spec, &data, &d, &cfg.vb, None)?;
            let lambda = vec![1.0; data.n()];
            let intervals = vb_interval(&state, cfg.alpha, &lambda)?;
            let (lo, hi): (Vec<f64>, Vec<f64>) = intervals.into_iter().unzip();
            let mut metrics = compute_metrics(&state.mu, &lo, &hi, truth)?;
            metrics.wall_seconds = state.wall_seconds;
            Ok(RepOutcome { metrics })
        }
        Method::CvbHs | Method::CvbLap => {
            let calib_cfg = CalibrationConfig {
                bootstrap: cfg.bootstrap,
                alpha: cfg.alpha,
                seed: rep_seed,
                ..CalibrationConfig::default()
            };
            let post = calibrate(&spec, &data, &d, &cfg.vb, &calib_cfg)?;
            let (lo, hi): (Vec<f64>, Vec<f64>) = post.intervals.iter().cloned().unzip();
            let mut metrics = compute_metrics(&post.mu_star, &lo, &hi, truth)?;
            metrics.wall_seconds = post.wall_seconds;
            // B bootstrap point estimates counted as B independent samples
            // over the full calibration wall time
            metrics.ess_per_second =
                cfg.bootstrap as f64 / post.wall_seconds.max(1e-12);
            Ok(RepOutcome { metrics })
        }
    }
}

/// Run the benchmark grid. Replications run in parallel with derived seeds;
/// failures are counted per row rather than aborting the run. Aggregation is
/// an index-ordered compensated sum, so results do not depend on thread
/// scheduling.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for (s_idx, scenario) in cfg.scenarios.iter().enumerate() {
        for &p in &cfg.quantiles {
            let truth = true_quantiles(scenario, p)?;
            // one dataset per replication, shared across methods
            let datasets: Vec<(u64, Result<GridDataset>)> = (0..cfg.replications)
                .map(|rep| {
                    let seed =
                        derive_seed(cfg.seed, (s_idx as u64) << 32 | rep as u64);
                    (seed, gen_dataset(scenario, seed))
                })
                .collect();
            for &method in &cfg.methods {
                let outcomes: Vec<Option<MetricsRecord>> = datasets
                    .par_iter()
                    .map(|(seed, data)| match data {
                        Ok(data) => {
                            run_method_once(cfg, scenario, method, p, data, &truth, *seed)
                                .ok()
                                .map(|o| o.metrics)
                        }
                        Err(_) => None,
                    })
                    .collect();
                let n_fail = outcomes.iter().filter(|o| o.is_none()).count();
                let mut acc = [0.0f64; 6];
                let mut comp = [0.0f64; 6];
                let mut count = 0.0f64;
                for m in outcomes.into_iter().flatten() {
                    count += 1.0;
                    for (j, v) in [
                        m.mse,
                        m.mad,
                        m.mciw,
                        m.cp,
                        m.ess_per_second,
                        m.wall_seconds,
                    ]
                    .into_iter()
                    .enumerate()
                    {
                        // Kahan compensated sum
                        let y = v - comp[j];
                        let t = acc[j] + y;
                        comp[j] = (t - acc[j]) - y;
                        acc[j] = t;
                    }
                }
                let denom = count.max(1.0);
                rows.push(BenchRow {
                    scenario: scenario.kind,
                    noise: scenario.noise,
                    method,
                    p,
                    metrics: MetricsRecord {
                        mse: acc[0] / denom,
                        mad: acc[1] / denom,
                        mciw: acc[2] / denom,
                        cp: acc[3] / denom,
                        ess_per_second: acc[4] / denom,
                        wall_seconds: acc[5] / denom,
                    },
                    n_fail,
                });
            }
        }
    }
    Ok(rows)
}
