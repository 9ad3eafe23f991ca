//! Independent reference implementations used as test oracles: quadrature
//! for Bessel K and GIG moments, small dense linear algebra for checking the
//! banded routines, and the joint-distribution (Geweke-style) sampler check.
//! Nothing here shares code with the implementations it verifies except
//! where the check is *of* that code.

#![doc(hidden)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffops::assemble_d;
use crate::eval::effective_sample_size;
use crate::gibbs::{draw_observations, prior_draw, sweep};
use crate::model::{GridDataset, PriorFamily, QuantileModelSpec};

/// One monitored statistic of the joint-distribution test.
#[derive(Debug, Clone)]
pub struct GewekeStat {
    pub name: &'static str,
    pub forward_mean: f64,
    pub successive_mean: f64,
    /// Combined standard error (i.i.d. forward, ESS-adjusted successive).
    pub se: f64,
}

impl GewekeStat {
    pub fn z_score(&self) -> f64 {
        (self.forward_mean - self.successive_mean) / self.se
    }
}

/// Joint-distribution test of the Gibbs conditionals: moments of
/// `theta_1, theta_1^2, sigma^2, sigma^4` under forward simulation
/// (prior, latents, observations) must match the successive-conditional
/// chain that alternates one posterior sweep with an observation redraw.
///
/// Hyperparameters are tightened to `a = b = 5` on the inverse-gamma priors
/// so all monitored moments (and their standard errors) exist.
pub fn geweke_check(
    prior: PriorFamily,
    p: f64,
    n: usize,
    k: usize,
    samples: usize,
    thin: usize,
    seed: u64,
) -> crate::Result<Vec<GewekeStat>> {
    let mut spec = QuantileModelSpec::new(p, k, prior)?;
    spec.a_sigma = 5.0;
    spec.b_sigma = 5.0;
    spec.a_w = 5.0;
    spec.b_w = 5.0;
    let x: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let template = GridDataset::new(x, vec![vec![0.0]; n]);
    let d = assemble_d(n, k, None)?;

    let record = |state: &crate::gibbs::GibbsState| -> [f64; 4] {
        let t = state.theta[0];
        [t, t * t, state.sigma2, state.sigma2 * state.sigma2]
    };

    // forward: independent draws from prior + likelihood
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut forward: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(samples)).collect();
    let mut data = template.clone();
    for _ in 0..samples {
        let state = prior_draw(&spec, &template, &d, &mut rng)?;
        draw_observations(&state, &spec, &mut data, &mut rng)?;
        for (acc, v) in forward.iter_mut().zip(record(&state)) {
            acc.push(v);
        }
    }

    // successive-conditional: sweep the posterior, then redraw observations
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);
    let mut state = prior_draw(&spec, &template, &d, &mut rng)?;
    let mut data = template.clone();
    draw_observations(&state, &spec, &mut data, &mut rng)?;
    let mut successive: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(samples)).collect();
    for _ in 0..samples {
        for _ in 0..thin {
            sweep(&mut state, &spec, &data, &d, &mut rng)?;
            draw_observations(&state, &spec, &mut data, &mut rng)?;
        }
        for (acc, v) in successive.iter_mut().zip(record(&state)) {
            acc.push(v);
        }
    }

    let names = ["theta_1", "theta_1^2", "sigma^2", "sigma^4"];
    let mut stats = Vec::with_capacity(4);
    for j in 0..4 {
        let f = &forward[j];
        let s = &successive[j];
        let mf = f.iter().sum::<f64>() / f.len() as f64;
        let ms = s.iter().sum::<f64>() / s.len() as f64;
        let vf = f.iter().map(|v| (v - mf) * (v - mf)).sum::<f64>() / f.len() as f64;
        let vs = s.iter().map(|v| (v - ms) * (v - ms)).sum::<f64>() / s.len() as f64;
        let ess = effective_sample_size(s)?;
        let se = (vf / f.len() as f64 + vs / ess).sqrt().max(1e-300);
        stats.push(GewekeStat {
            name: names[j],
            forward_mean: mf,
            successive_mean: ms,
            se,
        });
    }
    Ok(stats)
}

/// `log K_nu(x)` by composite Simpson quadrature of
/// `∫_0^∞ exp(-x cosh t) cosh(nu t) dt`, evaluated in log space.
pub fn log_bessel_k_quadrature(nu: f64, x: f64) -> f64 {
    // integrand peaks near asinh(nu/x); march out until it has decayed
    let t_peak = (nu / x).asinh();
    let log_g = |t: f64| -x * t.cosh() + log_cosh(nu * t);
    let peak = log_g(t_peak);
    let mut t_max = t_peak.max(1.0);
    while log_g(t_max) > peak - 80.0 {
        t_max += 1.0;
    }
    let m = 200_001; // odd point count for Simpson
    let h = t_max / (m - 1) as f64;
    let mut terms = Vec::with_capacity(m);
    for i in 0..m {
        let w: f64 = if i == 0 || i == m - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        terms.push(w.ln() + log_g(i as f64 * h));
    }
    log_sum_exp(&terms) + (h / 3.0).ln()
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (0.5 * (1.0 + (-2.0 * a).exp())).ln()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// `(E[z], E[1/z])` of `GIG(order, a, b)` by quadrature in `u = ln z`.
pub fn gig_moments_quadrature(order: f64, a: f64, b: f64) -> (f64, f64) {
    let log_f = |u: f64, r: f64| (order + r) * u - 0.5 * (a * (-u).exp() + b * u.exp());
    // mode of the r = 0 integrand in u, then a generous fixed window
    let u_mode = ((order + (order * order + a * b).sqrt()) / b).ln();
    let (lo, hi) = (u_mode - 60.0, u_mode + 60.0);
    let m = 200_001;
    let h = (hi - lo) / (m - 1) as f64;
    let integral = |r: f64| -> f64 {
        let mut terms = Vec::with_capacity(m);
        for i in 0..m {
            let w: f64 = if i == 0 || i == m - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            terms.push(w.ln() + log_f(lo + i as f64 * h, r));
        }
        log_sum_exp(&terms)
    };
    let base = integral(0.0);
    ((integral(1.0) - base).exp(), (integral(-1.0) - base).exp())
}

/// Dense matrix-matrix product.
pub fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (ra, ca) = (a.len(), a[0].len());
    let cb = b[0].len();
    assert_eq!(ca, b.len());
    let mut out = vec![vec![0.0; cb]; ra];
    for i in 0..ra {
        for k in 0..ca {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..cb {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Dense inverse by Gauss–Jordan with partial pivoting.
pub fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix in dense oracle");
        for j in 0..2 * n {
            m[col][j] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[i][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|row| row[n..].to_vec()).collect()
}

/// Determinant by LU with partial pivoting.
pub fn dense_det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        if piv != col {
            m.swap(col, piv);
            det = -det;
        }
        let p = m[col][col];
        if p == 0.0 {
            return 0.0;
        }
        det *= p;
        for i in col + 1..n {
            let f = m[i][col] / p;
            for j in col..n {
                m[i][j] -= f * m[col][j];
            }
        }
    }
    det
}

/// Dense standard difference matrix built directly from the recursion, one
/// dense product per order step.
pub fn dense_standard_diff(n: usize, order: usize) -> Vec<Vec<f64>> {
    let first = |rows: usize| -> Vec<Vec<f64>> {
        (0..rows - 1)
            .map(|r| {
                let mut row = vec![0.0; rows];
                row[r] = 1.0;
                row[r + 1] = -1.0;
                row
            })
            .collect()
    };
    let mut d = first(n);
    for k in 1..order {
        d = dense_mul(&first(n - k), &d);
    }
    d
}

/// Dense grid-adjusted difference matrix from the recursion, scaling rows by
/// `k / (x[j+k] - x[j])` before each first-difference step.
pub fn dense_adjusted_diff(x: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let first = |rows: usize| -> Vec<Vec<f64>> {
        (0..rows - 1)
            .map(|r| {
                let mut row = vec![0.0; rows];
                row[r] = 1.0;
                row[r + 1] = -1.0;
                row
            })
            .collect()
    };
    let mut d = first(n);
    for k in 1..order {
        let scaled: Vec<Vec<f64>> = d
            .iter()
            .enumerate()
            .map(|(j, row)| {
                let c = k as f64 / (x[j + k] - x[j]);
                row.iter().map(|v| c * v).collect()
            })
            .collect();
        d = dense_mul(&first(n - k), &scaled);
    }
    d
}
