//! Mean-field variational Bayes coordinate ascent for both shrinkage
//! priors.
//!
//! The variational family mirrors the Gibbs full conditionals: a Gaussian
//! factor for the trend with banded precision `E_{1/sigma^2} A`, GIG factors
//! for the latent scales, and inverse-gamma factors for everything else.
//! Each cycle refreshes the common block (trend moments, scale moments,
//! latent-scale moments, boundary weights) and then the prior-specific
//! shrinkage block; iteration stops when `max_i |Delta E_theta_i|` falls
//! below the tolerance.
//!
//! A fit is deterministic: no randomness enters the coordinate ascent.

use std::time::Instant;

use crate::diffops::{assemble_precision, solve_gaussian_summary, DifferenceOperator};
use crate::model::{GridDataset, PriorFamily, QuantileModelSpec};
use crate::specfun::{al_constants, gig_mean_pair, norm_quantile, GigParams, GIG_A_FLOOR};
use crate::{Error, Result};

/// Tolerance and iteration cap of the coordinate ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbControl {
    /// Stop when `max_i |Delta E_theta_i| < tol`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for VbControl {
    fn default() -> Self {
        VbControl { tol: 1e-4, max_iters: 10_000 }
    }
}

/// All variational moments plus the Gaussian summary of the trend factor.
#[derive(Debug, Clone)]
pub struct VariationalState {
    /// Mean of the trend factor, `A^{-1} B`.
    pub mu: Vec<f64>,
    /// Marginal variances of the trend factor, `diag((E_{1/sigma^2} A)^{-1})`.
    pub var_diag: Vec<f64>,
    pub e_theta: Vec<f64>,
    pub e_theta2: Vec<f64>,
    /// Second moments of the difference-row contrasts `(D theta)_i`.
    pub e_eta2: Vec<f64>,
    pub e_z: Vec<Vec<f64>>,
    pub e_inv_z: Vec<Vec<f64>>,
    pub e_sigma2: f64,
    pub e_inv_sigma2: f64,
    /// `E[1/w_i^2]` for every row of D.
    pub e_inv_w2: Vec<f64>,
    /// `E[w_i^2]` for the penalized rows (Laplace prior only).
    pub e_w2_pen: Vec<f64>,
    pub e_gamma2: f64,
    pub e_inv_gamma2: f64,
    pub e_inv_nu: f64,
    /// Horseshoe only; pinned to 1 and 0 respectively under Laplace.
    pub e_inv_tau2: f64,
    pub e_inv_xi: f64,
    pub e_inv_nu_i: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_seconds: f64,
}

impl VariationalState {
    /// Data-scale start: the latent-scale and noise moments are seeded from
    /// a robust residual scale (mean absolute deviation around the pooled
    /// median), so the first cycles begin on the smooth side regardless of
    /// the units of y. Local shrinkage moments start at their unit-scale
    /// prior values.
    pub fn init(spec: &QuantileModelSpec, data: &GridDataset) -> Self {
        let n = data.n();
        let total = data.total_obs() as f64;
        let mut pooled: Vec<f64> = data.y.iter().flatten().copied().collect();
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let center = crate::model::interp_quantile(&pooled, 0.5);
        let scale = (data
            .y
            .iter()
            .flatten()
            .map(|v| (v - center).abs())
            .sum::<f64>()
            / total)
            .max(1e-8);
        let e_inv_sigma2 = 1.0 / scale;
        let n_pen = n - spec.k - 1;
        VariationalState {
            mu: vec![0.0; n],
            var_diag: vec![1.0; n],
            e_theta: vec![0.0; n],
            e_theta2: vec![1.0; n],
            e_eta2: vec![1.0; n],
            e_z: data.y.iter().map(|row| vec![scale; row.len()]).collect(),
            e_inv_z: data.y.iter().map(|row| vec![2.0 / scale; row.len()]).collect(),
            e_sigma2: scale,
            e_inv_sigma2,
            e_inv_w2: vec![1.0; n],
            e_w2_pen: vec![1.0; n_pen],
            e_gamma2: 1.0,
            e_inv_gamma2: 1.0,
            e_inv_nu: 0.5,
            e_inv_tau2: 1.0,
            e_inv_xi: match spec.prior {
                PriorFamily::Horseshoe => 0.5,
                PriorFamily::Laplace => 0.0,
            },
            e_inv_nu_i: vec![0.5; n_pen],
            iterations: 0,
            converged: false,
            wall_seconds: 0.0,
        }
    }
}

/// Moment floor mirroring the sampler-side clamp.
const MOMENT_MIN: f64 = 1e-300;
const MOMENT_MAX: f64 = 1e300;

fn clamp_moment(x: f64) -> f64 {
    x.clamp(MOMENT_MIN, MOMENT_MAX)
}

/// The common cycle shared by both priors: trend factor, scale factor,
/// latent scales and boundary weights.
pub fn vb_common_cycle(
    state: &mut VariationalState,
    spec: &QuantileModelSpec,
    data: &GridDataset,
    d: &DifferenceOperator,
) -> Result<()> {
    let al = al_constants(spec.p)?;
    let n = data.n();
    let total = data.total_obs() as f64;

    // precision weights: boundary E[1/w^2], penalized E[1/tau^2] E[1/w^2]
    let inv_w: Vec<f64> = state
        .e_inv_w2
        .iter()
        .enumerate()
        .map(|(i, &iw)| {
            if i <= spec.k {
                clamp_moment(iw)
            } else {
                clamp_moment(state.e_inv_tau2 * iw)
            }
        })
        .collect();
    let mut extra = vec![0.0; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        let mut s_inv = 0.0;
        let mut s_y = 0.0;
        for (&y, &eiz) in data.y[i].iter().zip(&state.e_inv_z[i]) {
            s_inv += eiz;
            s_y += y * eiz;
        }
        extra[i] = s_inv / al.t2;
        b[i] = (s_y - data.y[i].len() as f64 * al.psi) / al.t2;
    }
    let mut sys = assemble_precision(d, &inv_w, &extra)?;
    sys.b = b;
    let summary = solve_gaussian_summary(&sys, d)?;

    // trend moments under q(theta) = N(A^{-1}B, (E_{1/sigma^2} A)^{-1})
    let sigma_scale = 1.0 / state.e_inv_sigma2;
    state.mu = summary.mean;
    for i in 0..n {
        state.var_diag[i] = sigma_scale * summary.var_diag[i];
        state.e_theta[i] = state.mu[i];
        state.e_theta2[i] = state.var_diag[i] + state.mu[i] * state.mu[i];
    }
    for i in 0..n {
        let (start, c) = d.row(i);
        let mut dm = 0.0;
        for (j, &cj) in c.iter().enumerate() {
            dm += cj * state.mu[start + j];
        }
        state.e_eta2[i] = sigma_scale * summary.eta2[i] + dm * dm;
    }

    // scale factor q(sigma^2) = IG((n + 3N)/2 + a_sigma, alpha_sigma2)
    let mut alpha = spec.b_sigma;
    for i in 0..n {
        for ((&y, &ez), &eiz) in data.y[i]
            .iter()
            .zip(&state.e_z[i])
            .zip(&state.e_inv_z[i])
        {
            alpha += (y * y * eiz - 2.0 * al.psi * y + al.psi * al.psi * ez
                - 2.0 * (eiz * y - al.psi) * state.e_theta[i]
                + state.e_theta2[i] * eiz)
                / (2.0 * al.t2)
                + ez;
        }
    }
    for i in 0..n {
        alpha += 0.5 * state.e_eta2[i] * inv_w[i];
    }
    let dof = n as f64 + 3.0 * total + 2.0 * spec.a_sigma;
    state.e_sigma2 = 2.0 * alpha / (dof - 2.0);
    state.e_inv_sigma2 = dof / (2.0 * alpha);

    // latent scales q(z_ij) = GIG(1/2, alpha_z, beta_z)
    let beta_z = (al.psi * al.psi / al.t2 + 2.0) * state.e_inv_sigma2;
    for i in 0..n {
        for (j, &y) in data.y[i].iter().enumerate() {
            let a_z = ((y * y - 2.0 * y * state.e_theta[i] + state.e_theta2[i])
                * state.e_inv_sigma2
                / al.t2)
                .max(GIG_A_FLOOR);
            let (ez, eiz) = gig_mean_pair(&GigParams::new(0.5, a_z, beta_z)?)?;
            state.e_z[i][j] = clamp_moment(ez);
            state.e_inv_z[i][j] = clamp_moment(eiz);
        }
    }

    // boundary weights q(w_i^2) = IG(1/2 + a_w, E_eta2 E_{1/sigma^2}/2 + b_w)
    for i in 0..=spec.k {
        state.e_inv_w2[i] = clamp_moment(
            (1.0 + 2.0 * spec.a_w)
                / (state.e_eta2[i] * state.e_inv_sigma2 + 2.0 * spec.b_w),
        );
    }
    Ok(())
}

/// Laplace shrinkage cycle: penalized weights through their GIG factors,
/// then the Laplace rate `gamma^2` and its augmentation.
pub fn vb_laplace_cycle(
    state: &mut VariationalState,
    spec: &QuantileModelSpec,
    d: &DifferenceOperator,
) -> Result<()> {
    let n = d.n();
    let mut w2_sum = 0.0;
    for i in spec.k + 1..n {
        let pen = i - spec.k - 1;
        let alpha_w = (state.e_inv_sigma2 * state.e_eta2[i]).max(GIG_A_FLOOR);
        let (ew2, eiw2) =
            gig_mean_pair(&GigParams::new(0.5, alpha_w, state.e_gamma2)?)?;
        state.e_w2_pen[pen] = clamp_moment(ew2);
        state.e_inv_w2[i] = clamp_moment(eiw2);
        w2_sum += state.e_w2_pen[pen];
    }
    let order = n as f64 - spec.k as f64 - 1.5;
    let (eg2, eig2) = gig_mean_pair(&GigParams::new(
        order,
        (2.0 * state.e_inv_nu).max(GIG_A_FLOOR),
        clamp_moment(w2_sum),
    )?)?;
    state.e_gamma2 = clamp_moment(eg2);
    state.e_inv_gamma2 = clamp_moment(eig2);
    state.e_inv_nu = 1.0 / (2.0 * (state.e_inv_gamma2 + 1.0));
    Ok(())
}

/// Horseshoe shrinkage cycle: penalized weights, their augmentations, the
/// global scale and its augmentation — all closed-form inverse-gamma moments.
pub fn vb_horseshoe_cycle(
    state: &mut VariationalState,
    spec: &QuantileModelSpec,
    d: &DifferenceOperator,
) -> Result<()> {
    let n = d.n();
    let mut ratio_sum = 0.0;
    for i in spec.k + 1..n {
        let pen = i - spec.k - 1;
        let alpha_w = state.e_inv_nu_i[pen]
            + 0.5 * state.e_inv_sigma2 * state.e_inv_tau2 * state.e_eta2[i];
        state.e_inv_w2[i] = clamp_moment(1.0 / alpha_w);
        state.e_inv_nu_i[pen] = 1.0 / (2.0 * (state.e_inv_w2[i] + 1.0));
        ratio_sum += state.e_eta2[i] * state.e_inv_w2[i];
    }
    let alpha_tau = 0.5 * state.e_inv_sigma2 * ratio_sum + state.e_inv_xi;
    state.e_inv_tau2 = clamp_moment((n - spec.k) as f64 / (2.0 * alpha_tau));
    state.e_inv_xi =
        1.0 / (2.0 * (state.e_inv_tau2 + 1.0 / (spec.c_tau * spec.c_tau)));
    Ok(())
}

/// Run the coordinate ascent to convergence (or the iteration cap, in which
/// case the state comes back flagged, not as an error).
pub fn vb_fit(
    spec: &QuantileModelSpec,
    data: &GridDataset,
    d: &DifferenceOperator,
    ctrl: &VbControl,
    warm_start: Option<&VariationalState>,
) -> Result<VariationalState> {
    let start = Instant::now();
    let mut state = match warm_start {
        Some(s) => {
            let mut s = s.clone();
            s.iterations = 0;
            s.converged = false;
            s
        }
        None => VariationalState::init(spec, data),
    };
    let mut prev = state.e_theta.clone();
    for it in 1..=ctrl.max_iters {
        vb_common_cycle(&mut state, spec, data, d)?;
        match spec.prior {
            PriorFamily::Laplace => vb_laplace_cycle(&mut state, spec, d)?,
            PriorFamily::Horseshoe => vb_horseshoe_cycle(&mut state, spec, d)?,
        }
        state.iterations = it;
        let delta = state
            .e_theta
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if delta < ctrl.tol {
            state.converged = true;
            break;
        }
        prev.copy_from_slice(&state.e_theta);
    }
    state.wall_seconds = start.elapsed().as_secs_f64();
    Ok(state)
}

/// Pointwise credible intervals `mu_i ± z_{1-alpha/2} sqrt(lambda_i
/// var_diag_i)`.
pub fn vb_interval(
    state: &VariationalState,
    alpha: f64,
    lambda: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if lambda.len() != state.mu.len() {
        return Err(Error::InvalidDimension(format!(
            "lambda length {} does not match n = {}",
            lambda.len(),
            state.mu.len()
        )));
    }
    let z = norm_quantile(1.0 - alpha / 2.0)?;
    state
        .mu
        .iter()
        .zip(&state.var_diag)
        .zip(lambda)
        .map(|((&m, &v), &l)| {
            if !(l > 0.0) {
                return Err(Error::Domain(format!("lambda must be positive, got {l}")));
            }
            let half = z * (l * v).sqrt();
            Ok((m - half, m + half))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffops::assemble_d;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn constant_data(n: usize, c: f64) -> GridDataset {
        GridDataset::new((1..=n).map(|i| i as f64).collect(), vec![vec![c]; n])
    }

    fn hs(p: f64, k: usize) -> QuantileModelSpec {
        QuantileModelSpec::new(p, k, PriorFamily::Horseshoe).unwrap()
    }

    fn lap(p: f64, k: usize) -> QuantileModelSpec {
        QuantileModelSpec::new(p, k, PriorFamily::Laplace).unwrap()
    }

    #[test]
    fn sigma_moment_updates_match_closed_forms() {
        let n = 6;
        let data = constant_data(n, 1.5);
        let spec = hs(0.5, 0);
        let d = assemble_d(n, 0, None).unwrap();
        let mut state = VariationalState::init(&spec, &data);
        vb_common_cycle(&mut state, &spec, &data, &d).unwrap();
        // reconstruct alpha_sigma2 from the reported moments
        let dof = n as f64 + 3.0 * n as f64 + 2.0 * spec.a_sigma;
        let alpha_from_inv = dof / (2.0 * state.e_inv_sigma2);
        let alpha_from_mean = state.e_sigma2 * (dof - 2.0) / 2.0;
        assert_relative_eq!(alpha_from_inv, alpha_from_mean, max_relative = 1e-12);
    }

    #[test]
    fn shift_vector_reduces_to_scaled_sums_at_median() {
        // with E_{1/z} = 1 and psi = 0 the shift is sum(y)/t^2
        let data = GridDataset::new(
            vec![1.0, 2.0],
            vec![vec![1.0, 3.0], vec![2.0]],
        );
        let spec = hs(0.5, 0);
        let mut state = VariationalState::init(&spec, &data);
        for row in state.e_inv_z.iter_mut() {
            row.iter_mut().for_each(|v| *v = 1.0);
        }
        let al = al_constants(0.5).unwrap();
        // replicate the shift computation
        let mut b = [0.0; 2];
        for i in 0..2 {
            let mut s = 0.0;
            for (&y, &eiz) in data.y[i].iter().zip(&state.e_inv_z[i]) {
                s += y * eiz;
            }
            b[i] = (s - data.y[i].len() as f64 * al.psi) / al.t2;
        }
        assert_abs_diff_eq!(b[0], 4.0 / 8.0);
        assert_abs_diff_eq!(b[1], 2.0 / 8.0);
    }

    #[test]
    fn theta_second_moment_dominates_squared_mean() {
        let n = 12;
        let data = GridDataset::new(
            (1..=n).map(|i| i as f64).collect(),
            (0..n).map(|i| vec![(i as f64 * 0.3).cos()]).collect(),
        );
        for spec in [hs(0.3, 1), lap(0.3, 1)] {
            let d = assemble_d(n, 1, None).unwrap();
            let state = vb_fit(&spec, &data, &d, &VbControl::default(), None).unwrap();
            assert!(state.converged);
            for i in 0..n {
                assert!(state.e_theta2[i] >= state.e_theta[i] * state.e_theta[i]);
                assert!(state.var_diag[i] > 0.0);
                assert!(state.e_eta2[i] >= 0.0);
            }
            for (ez, eiz) in state.e_z.iter().flatten().zip(state.e_inv_z.iter().flatten()) {
                assert!(ez * eiz >= 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn laplace_nu_update_closed_form() {
        // E_{1/nu} = 1/(2(E_{1/gamma^2} + 1)), approaching 1/2 as the
        // reciprocal gamma moment vanishes
        let n = 5;
        let data = constant_data(n, 0.0);
        let spec = lap(0.5, 0);
        let d = assemble_d(n, 0, None).unwrap();
        let mut state = VariationalState::init(&spec, &data);
        state.e_eta2 = vec![1e-12; n];
        state.e_inv_sigma2 = 1.0;
        vb_laplace_cycle(&mut state, &spec, &d).unwrap();
        assert_abs_diff_eq!(
            state.e_inv_nu,
            1.0 / (2.0 * (state.e_inv_gamma2 + 1.0)),
            epsilon = 1e-15
        );
        assert!(state.e_inv_nu < 0.5);
    }

    #[test]
    fn horseshoe_xi_update_closed_form() {
        // E_{1/xi} = 1/(2(E_{1/tau^2} + 1)) = 1/4 at E_{1/tau^2} = 1
        assert_abs_diff_eq!(1.0 / (2.0 * (1.0 + 1.0)), 0.25);
    }

    #[test]
    fn laplace_gamma_moments_match_quadrature() {
        // order n - k - 3/2 = 8.5 with arguments (2, 5)
        let (eg, eig) = gig_mean_pair(&GigParams::new(8.5, 2.0, 5.0).unwrap()).unwrap();
        let (qg, qig) = crate::oracle::gig_moments_quadrature(8.5, 2.0, 5.0);
        assert_relative_eq!(eg, qg, max_relative = 1e-9);
        assert_relative_eq!(eig, qig, max_relative = 1e-9);
    }

    #[test]
    fn horseshoe_reciprocal_weight_is_inverse_rate() {
        let n = 6;
        let data = constant_data(n, 0.0);
        let spec = hs(0.5, 0);
        let d = assemble_d(n, 0, None).unwrap();
        let mut state = VariationalState::init(&spec, &data);
        state.e_eta2 = vec![2.0; n];
        state.e_inv_sigma2 = 1.5;
        state.e_inv_tau2 = 0.5;
        state.e_inv_nu_i = vec![0.25; n - 1];
        let expect_alpha = 0.25 + 0.5 * 1.5 * 0.5 * 2.0;
        vb_horseshoe_cycle(&mut state, &spec, &d).unwrap();
        assert_relative_eq!(state.e_inv_w2[1], 1.0 / expect_alpha, max_relative = 1e-12);
    }

    #[test]
    fn horseshoe_global_moment_fixed_point() {
        // E_{1/tau^2} = (n - k) / (2 alpha_tau2): equals 1 when alpha_tau2
        // is (n - k)/2
        let n = 10;
        let k = 1;
        let alpha = (n - k) as f64 / 2.0;
        assert_abs_diff_eq!((n - k) as f64 / (2.0 * alpha), 1.0);
    }

    #[test]
    fn median_constant_data_converges_to_constant() {
        let n = 30;
        let c = -0.75;
        let data = constant_data(n, c);
        for spec in [hs(0.5, 0), lap(0.5, 0)] {
            let d = assemble_d(n, 0, None).unwrap();
            let state = vb_fit(&spec, &data, &d, &VbControl::default(), None).unwrap();
            assert!(state.converged, "{:?}", spec.prior);
            for &m in &state.mu {
                assert!((m - c).abs() < 1e-3, "{:?}: {m} vs {c}", spec.prior);
            }
        }
    }

    #[test]
    fn common_cycle_identical_across_priors_given_same_moments() {
        let n = 9;
        let data = GridDataset::new(
            (1..=n).map(|i| i as f64).collect(),
            (0..n).map(|i| vec![0.3 * i as f64]).collect(),
        );
        let d = assemble_d(n, 1, None).unwrap();
        let spec_h = hs(0.25, 1);
        let spec_l = lap(0.25, 1);
        let mut sh = VariationalState::init(&spec_h, &data);
        let mut sl = VariationalState::init(&spec_l, &data);
        // align the moment inputs that feed the common cycle
        sl.e_inv_tau2 = sh.e_inv_tau2;
        vb_common_cycle(&mut sh, &spec_h, &data, &d).unwrap();
        vb_common_cycle(&mut sl, &spec_l, &data, &d).unwrap();
        assert_eq!(sh.mu, sl.mu);
        assert_eq!(sh.e_theta2, sl.e_theta2);
        assert_eq!(sh.e_eta2, sl.e_eta2);
    }

    #[test]
    fn interval_examples() {
        let spec = hs(0.5, 0);
        let data = constant_data(3, 0.0);
        let mut state = VariationalState::init(&spec, &data);
        state.mu = vec![0.0; 3];
        state.var_diag = vec![1.0; 3];
        let iv = vb_interval(&state, 0.05, &[1.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(iv[0].0, -1.9600, epsilon = 5e-5);
        assert_abs_diff_eq!(iv[0].1, 1.9600, epsilon = 5e-5);
        // lambda = 4 doubles the width
        let iv4 = vb_interval(&state, 0.05, &[4.0, 4.0, 4.0]).unwrap();
        assert_relative_eq!(
            iv4[0].1 - iv4[0].0,
            2.0 * (iv[0].1 - iv[0].0),
            max_relative = 1e-12
        );
        assert!(vb_interval(&state, 0.05, &[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn nonconvergence_is_flagged_not_error() {
        let n = 25;
        let data = GridDataset::new(
            (1..=n).map(|i| i as f64).collect(),
            (0..n).map(|i| vec![(i as f64).sin() * 3.0]).collect(),
        );
        let spec = hs(0.1, 0);
        let d = assemble_d(n, 0, None).unwrap();
        let ctrl = VbControl { tol: 1e-12, max_iters: 3 };
        let state = vb_fit(&spec, &data, &d, &ctrl, None).unwrap();
        assert!(!state.converged);
        assert_eq!(state.iterations, 3);
    }

    #[test]
    fn warm_start_reaches_same_fixed_point() {
        let n = 20;
        let data = GridDataset::new(
            (1..=n).map(|i| i as f64).collect(),
            (0..n).map(|i| vec![if i < n / 2 { 0.0 } else { 2.0 }]).collect(),
        );
        let spec = hs(0.5, 0);
        let d = assemble_d(n, 0, None).unwrap();
        let ctrl = VbControl { tol: 1e-8, max_iters: 20_000 };
        let cold = vb_fit(&spec, &data, &d, &ctrl, None).unwrap();
        let warm = vb_fit(&spec, &data, &d, &ctrl, Some(&cold)).unwrap();
        assert!(warm.converged);
        assert!(warm.iterations <= cold.iterations);
        for (a, b) in warm.mu.iter().zip(&cold.mu) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }
}
