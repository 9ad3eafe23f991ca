//! Special functions and samplers shared by both inference engines:
//! asymmetric-Laplace constants, the check loss, modified Bessel K of
//! half-integer order, generalized-inverse-Gaussian moments and sampling,
//! and inverse-gamma sampling.
//!
//! The GIG density convention throughout is
//! `f(z) ∝ z^{order-1} exp(-(a/z + b·z)/2)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::{Error, Result};

/// Floor applied to the `1/z` coefficient when an exact fit drives it to
/// zero; keeps the inverse-Gaussian route finite.
pub const GIG_A_FLOOR: f64 = 1e-300;

/// Constants of the asymmetric-Laplace location-scale mixture at quantile
/// level p: `psi = (1-2p)/(p(1-p))` and `t2 = 2/(p(1-p))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlConstants {
    pub p: f64,
    pub psi: f64,
    pub t2: f64,
}

/// Mixture constants for quantile level `p ∈ (0, 1)`.
pub fn al_constants(p: f64) -> Result<AlConstants> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile level {p} outside (0, 1)")));
    }
    let pq = p * (1.0 - p);
    Ok(AlConstants { p, psi: (1.0 - 2.0 * p) / pq, t2: 2.0 / pq })
}

/// Check loss `rho_p(r) = sum_i r_i (p - 1{r_i < 0})`.
pub fn check_loss(r: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile level {p} outside (0, 1)")));
    }
    Ok(r.iter()
        .map(|&ri| ri * (p - if ri < 0.0 { 1.0 } else { 0.0 }))
        .sum())
}

fn require_half_integer(nu: f64) -> Result<u32> {
    let doubled = 2.0 * nu;
    if nu < 0.5 || doubled.fract() != 0.0 || (doubled as u64).is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "order {nu} is not a half-integer >= 1/2"
        )));
    }
    Ok(((doubled as u64 - 1) / 2) as u32)
}

/// `K_{nu+1}(x) / K_nu(x)` for half-integer `nu >= 1/2`, by the stable
/// upward ratio recurrence `r_nu = 1/r_{nu-1} + 2 nu / x` seeded with
/// `r_{1/2} = 1 + 1/x`.
pub fn bessel_k_ratio_half(nu: f64, x: f64) -> Result<f64> {
    let steps = require_half_integer(nu)?;
    if !(x > 0.0) {
        return Err(Error::Domain(format!("bessel ratio needs x > 0, got {x}")));
    }
    let mut r = 1.0 + 1.0 / x;
    let mut order = 0.5;
    for _ in 0..steps {
        order += 1.0;
        r = 1.0 / r + 2.0 * order / x;
    }
    Ok(r)
}

/// `log K_nu(x)` for half-integer `nu >= 1/2`, carried in log space from the
/// closed-form seed `K_{1/2}(x) = sqrt(pi/(2x)) e^{-x}`.
pub fn log_bessel_k_half(nu: f64, x: f64) -> Result<f64> {
    let steps = require_half_integer(nu)?;
    if !(x > 0.0) {
        return Err(Error::Domain(format!("log K needs x > 0, got {x}")));
    }
    let mut log_k = 0.5 * (std::f64::consts::PI / (2.0 * x)).ln() - x;
    let mut r = 1.0 + 1.0 / x;
    let mut order = 0.5;
    for _ in 0..steps {
        log_k += r.ln();
        order += 1.0;
        r = 1.0 / r + 2.0 * order / x;
    }
    Ok(log_k)
}

/// Parameters of `GIG(order, a, b)` with density
/// `f(z) ∝ z^{order-1} exp(-(a/z + b·z)/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    pub order: f64,
    pub a: f64,
    pub b: f64,
}

impl GigParams {
    pub fn new(order: f64, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::Domain(format!(
                "GIG coefficients must be positive, got a = {a}, b = {b}"
            )));
        }
        Ok(GigParams { order, a, b })
    }

    /// Like [`GigParams::new`] but with `a` floored at [`GIG_A_FLOOR`],
    /// covering the exact-interpolation boundary `a = 0`.
    pub fn with_floor(order: f64, a: f64, b: f64) -> Result<Self> {
        if a < 0.0 {
            return Err(Error::Domain(format!("GIG a must be nonnegative, got {a}")));
        }
        Self::new(order, a.max(GIG_A_FLOOR), b)
    }
}

/// First and reciprocal moments `(E[z], E[1/z])`.
///
/// `E[z] = sqrt(a/b) K_{ord+1}(s)/K_ord(s)` with `s = sqrt(ab)`; the
/// reciprocal moment is computed through `K_{ord-1}/K_ord`, which is
/// algebraically identical to the usual `sqrt(b/a) K_{ord+1}/K_ord - 2 ord/a`
/// but free of cancellation for large orders.
pub fn gig_mean_pair(params: &GigParams) -> Result<(f64, f64)> {
    let GigParams { order, a, b } = *params;
    let s = (a * b).sqrt();
    let e_z = (a / b).sqrt() * bessel_k_ratio_half(order, s)?;
    let e_inv_z = if order == 0.5 {
        // K_{-1/2} = K_{1/2}
        (b / a).sqrt()
    } else {
        (b / a).sqrt() / bessel_k_ratio_half(order - 1.0, s)?
    };
    Ok((e_z, e_inv_z))
}

/// One draw from `GIG(order, a, b)` for half-integer order.
///
/// Order 1/2 uses the inverse-Gaussian reciprocal identity; larger orders
/// fall back to ratio-of-uniforms rejection with mode shift.
pub fn sample_gig<R: Rng + ?Sized>(rng: &mut R, params: &GigParams) -> Result<f64> {
    let GigParams { order, a, b } = *params;
    if !(b > 0.0) {
        return Err(Error::Domain(format!("GIG b must be positive, got {b}")));
    }
    let a = a.max(GIG_A_FLOOR);
    if order == 0.5 {
        Ok(sample_gig_half(rng, a, b))
    } else if order >= 1.0 {
        Ok(sample_gig_rou(rng, order, a, b))
    } else {
        Err(Error::Domain(format!(
            "GIG sampling implemented for order 1/2 and orders >= 1, got {order}"
        )))
    }
}

/// `GIG(1/2, a, b)` draw via the reciprocal of an inverse-Gaussian variate
/// with mean `sqrt(b/a)` and shape `b` (Michael–Schucany–Haas), rearranged in
/// GIG-native quantities so that `a` at the floor neither overflows nor
/// cancels: the accepted reciprocal root is
/// `z1 = sqrt(a/b) + y/(2b) + sqrt(y(y/4 + s))/b` with `y ~ chi^2_1`,
/// `s = sqrt(ab)`, taken with probability `z1/(z1 + sqrt(a/b))`.
fn sample_gig_half<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let v: f64 = rng.sample(StandardNormal);
    let y = v * v;
    let s = (a * b).sqrt();
    // sqrt(a/b) in log space: the ratio itself may over/underflow
    let t1 = (0.5 * (a.ln() - b.ln())).exp();
    let z1 = t1 + y / (2.0 * b) + (y * (0.25 * y + s)).sqrt() / b;
    let u: f64 = rng.random();
    if u <= z1 / (z1 + t1) {
        z1
    } else {
        (t1 * (t1 / z1)).max(f64::MIN_POSITIVE)
    }
}

/// Ratio-of-uniforms with mode shift; valid for order >= 1 where the
/// bound-defining stationarity condition has a single root on each side of
/// the mode.
fn sample_gig_rou<R: Rng + ?Sized>(rng: &mut R, order: f64, a: f64, b: f64) -> f64 {
    let lm1 = order - 1.0;
    let mode = (lm1 + (lm1 * lm1 + a * b).sqrt()) / b;
    let log_h = |x: f64| lm1 * x.ln() - 0.5 * (a / x + b * x);
    let lh_mode = log_h(mode);
    // stationarity of (x - mode)^2 h(x), monotone on each side of the mode
    let phi = |x: f64| 2.0 / (x - mode) + lm1 / x + a / (2.0 * x * x) - b / 2.0;

    let mut hi = 2.0 * mode + 2.0 / b;
    while phi(hi) > 0.0 {
        hi *= 2.0;
    }
    let x_plus = bisect(phi, mode * (1.0 + 1e-12) + 1e-300, hi);
    let v_plus = (x_plus - mode) * (0.5 * (log_h(x_plus) - lh_mode)).exp();

    let mut lo = mode / 2.0;
    while phi(lo) < 0.0 {
        lo /= 2.0;
    }
    let x_minus = bisect(phi, lo, mode * (1.0 - 1e-12));
    let v_minus = (x_minus - mode) * (0.5 * (log_h(x_minus) - lh_mode)).exp();

    loop {
        let u: f64 = rng.random();
        if u == 0.0 {
            continue;
        }
        let v = v_minus + (v_plus - v_minus) * rng.random::<f64>();
        let x = mode + v / u;
        if x > 0.0 && 2.0 * u.ln() <= log_h(x) - lh_mode {
            return x;
        }
    }
}

/// Bisection for a decreasing function with a bracketed sign change.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One draw from `IG(shape, scale)` with density `∝ x^{-shape-1} e^{-scale/x}`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) {
        return Err(Error::Domain(format!(
            "inverse gamma needs positive parameters, got shape = {shape}, scale = {scale}"
        )));
    }
    let g = Gamma::new(shape, 1.0)
        .map_err(|e| Error::Domain(format!("gamma sampler: {e}")))?
        .sample(rng);
    Ok(scale / g)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: rational initial guess polished by two Halley
/// steps against the erfc-based CDF.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile argument {p} outside (0, 1)")));
    }
    let mut x = acklam_guess(p);
    for _ in 0..2 {
        let e = norm_cdf(x) - p;
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

fn acklam_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn al_constants_examples() {
        let c = al_constants(0.5).unwrap();
        assert_eq!(c.psi, 0.0);
        assert_eq!(c.t2, 8.0);
        let c = al_constants(0.25).unwrap();
        assert_relative_eq!(c.psi, 8.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(c.t2, 32.0 / 3.0, max_relative = 1e-15);
        let c = al_constants(0.95).unwrap();
        assert_relative_eq!(c.psi, -0.9 / 0.0475, max_relative = 1e-12);
        assert_relative_eq!(c.t2, 2.0 / 0.0475, max_relative = 1e-12);
        assert!(al_constants(0.0).is_err());
        assert!(al_constants(1.0).is_err());
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(&[1.0, -1.0], 0.5).unwrap(), 1.0);
        assert_relative_eq!(check_loss(&[2.0], 0.9).unwrap(), 1.8);
        assert_relative_eq!(check_loss(&[-2.0], 0.9).unwrap(), 0.2, max_relative = 1e-12);
        assert_eq!(check_loss(&[0.0, 0.0], 0.3).unwrap(), 0.0);
    }

    #[test]
    fn check_loss_tilted_absolute_identity() {
        // rho_p(r) + rho_{1-p}(r) = sum |r_i|, and rho_p(r) = rho_{1-p}(-r)
        let r = [1.3, -0.2, 0.0, -5.5, 2.0];
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        for &p in &[0.05, 0.3, 0.5, 0.77, 0.95] {
            let lhs = check_loss(&r, p).unwrap() + check_loss(&r, 1.0 - p).unwrap();
            let abs_sum: f64 = r.iter().map(|v| v.abs()).sum();
            assert_relative_eq!(lhs, abs_sum, max_relative = 1e-12);
            assert_relative_eq!(
                check_loss(&r, p).unwrap(),
                check_loss(&neg, 1.0 - p).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn check_loss_homogeneous_degree_one() {
        let r = [0.4, -1.7, 3.0];
        let scaled: Vec<f64> = r.iter().map(|v| 2.5 * v).collect();
        assert_relative_eq!(
            check_loss(&scaled, 0.3).unwrap(),
            2.5 * check_loss(&r, 0.3).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn log_k_half_closed_forms() {
        let v = log_bessel_k_half(0.5, 1.0).unwrap();
        let expect = (std::f64::consts::PI / 2.0).sqrt().ln() - 1.0;
        assert_abs_diff_eq!(v, expect, epsilon = 1e-14);
        // K_{3/2}(x) = K_{1/2}(x)(1 + 1/x)
        let v = log_bessel_k_half(1.5, 2.0).unwrap();
        let expect = log_bessel_k_half(0.5, 2.0).unwrap() + 1.5f64.ln();
        assert_abs_diff_eq!(v, expect, epsilon = 1e-14);
        assert!(log_bessel_k_half(0.5, 0.0).is_err());
        assert!(log_bessel_k_half(1.0, 1.0).is_err());
    }

    #[test]
    fn gig_mean_pair_order_half_closed_form() {
        for &(a, b) in &[(1.0, 1.0), (4.0, 1.0), (0.3, 7.0), (25.0, 0.04)] {
            let (e_z, e_inv) = gig_mean_pair(&GigParams::new(0.5, a, b).unwrap()).unwrap();
            let s = (a * b).sqrt();
            assert_relative_eq!(e_z, (a / b).sqrt() * (1.0 + 1.0 / s), max_relative = 1e-13);
            let expect_inv = (b / a).sqrt() * (1.0 + 1.0 / s) - 1.0 / a;
            assert_relative_eq!(e_inv, expect_inv, max_relative = 1e-12);
        }
        let (e_z, e_inv) = gig_mean_pair(&GigParams::new(0.5, 1.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(e_z, 2.0, max_relative = 1e-14);
        assert_relative_eq!(e_inv, 1.0, max_relative = 1e-14);
        let (e_z, _) = gig_mean_pair(&GigParams::new(0.5, 4.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(e_z, 3.0, max_relative = 1e-14);
    }

    #[test]
    fn gig_mean_pair_jensen() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = 10f64.powf(rng.random_range(-2.0..2.0));
            let b = 10f64.powf(rng.random_range(-2.0..2.0));
            let order = 0.5 + f64::from(rng.random_range(0u32..8));
            let (e_z, e_inv) = gig_mean_pair(&GigParams::new(order, a, b).unwrap()).unwrap();
            assert!(e_z > 0.0 && e_inv > 0.0);
            assert!(e_z * e_inv >= 1.0 - 1e-12, "a={a} b={b} order={order}");
        }
    }

    #[test]
    fn gig_domain_errors() {
        assert!(GigParams::new(0.5, 0.0, 1.0).is_err());
        assert!(GigParams::new(0.5, 1.0, -1.0).is_err());
        assert!(GigParams::with_floor(0.5, 0.0, 1.0).is_ok());
    }

    #[test]
    fn gig_sampler_reproducible() {
        let p = GigParams::new(0.5, 1.0, 1.0).unwrap();
        let draws = |seed: u64| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| sample_gig(&mut rng, &p).unwrap()).collect()
        };
        assert_eq!(draws(42), draws(42));
        assert_ne!(draws(42), draws(43));
    }

    #[test]
    fn gig_sampler_moments_order_half() {
        let p = GigParams::new(0.5, 1.0, 1.0).unwrap();
        let (e_z, e_inv) = gig_mean_pair(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 1_000_000;
        let (mut s1, mut s2, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..m {
            let z = sample_gig(&mut rng, &p).unwrap();
            s1 += z;
            s2 += z * z;
            r1 += 1.0 / z;
            r2 += 1.0 / (z * z);
        }
        let n = m as f64;
        let (mean, rec) = (s1 / n, r1 / n);
        let se_mean = ((s2 / n - mean * mean) / n).sqrt();
        let se_rec = ((r2 / n - rec * rec) / n).sqrt();
        assert!((mean - e_z).abs() < 3.0 * se_mean, "mean {mean} vs {e_z}");
        assert!((rec - e_inv).abs() < 3.0 * se_rec, "reciprocal {rec} vs {e_inv}");
    }

    #[test]
    fn gig_sampler_moments_large_order() {
        // exercises the ratio-of-uniforms path
        let p = GigParams::new(8.5, 2.0, 5.0).unwrap();
        let (e_z, e_inv) = gig_mean_pair(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 200_000;
        let (mut s1, mut s2, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..m {
            let z = sample_gig(&mut rng, &p).unwrap();
            s1 += z;
            s2 += z * z;
            r1 += 1.0 / z;
            r2 += 1.0 / (z * z);
        }
        let n = m as f64;
        let (mean, rec) = (s1 / n, r1 / n);
        let se_mean = ((s2 / n - mean * mean) / n).sqrt();
        let se_rec = ((r2 / n - rec * rec) / n).sqrt();
        assert!((mean - e_z).abs() < 4.0 * se_mean, "mean {mean} vs {e_z}");
        assert!((rec - e_inv).abs() < 4.0 * se_rec, "reciprocal {rec} vs {e_inv}");
    }

    #[test]
    fn inv_gamma_moments_and_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let x = sample_inv_gamma(&mut rng, 3.0, 2.0).unwrap();
            s1 += x;
            s2 += x * x;
        }
        let n = m as f64;
        let mean = s1 / n;
        let se = ((s2 / n - mean * mean) / n).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");

        // shape 1/2: mean undefined, median finite and positive
        let mut draws: Vec<f64> = (0..20_001)
            .map(|_| sample_inv_gamma(&mut rng, 0.5, 1.0).unwrap())
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[10_000];
        assert!(median.is_finite() && median > 0.0);

        assert!(sample_inv_gamma(&mut rng, 0.0, 1.0).is_err());
    }

    #[test]
    fn normal_quantile_accuracy() {
        assert_abs_diff_eq!(norm_quantile(0.975).unwrap(), 1.959_963_984_540_054, epsilon = 1e-10);
        assert_abs_diff_eq!(norm_quantile(0.5).unwrap(), 0.0, epsilon = 1e-12);
        for &p in &[1e-8, 1e-4, 0.2, 0.7, 1.0 - 1e-6] {
            let x = norm_quantile(p).unwrap();
            assert_abs_diff_eq!(norm_cdf(x), p, epsilon = 1e-12);
        }
        assert!(norm_quantile(0.0).is_err());
    }
}
