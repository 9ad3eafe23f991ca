//! Difference operators and the banded linear algebra used by both
//! inference engines.
//!
//! The square operator `D` stacks a (k+1)-dimensional identity block on top
//! of the order-(k+1) difference matrix, so it is lower banded with k+1
//! sub-diagonals and a nonzero diagonal. Precision matrices of the form
//! `A = Dᵀ diag(m) D + diag(e)` are therefore symmetric banded with
//! bandwidth k+1, and everything downstream (solve, posterior draw,
//! selected-inverse entries) runs in O(n·k²) via an LDLᵀ factorization and
//! the Takahashi recurrence. Dense matrices are never formed.

use crate::{Error, Result};

/// Relative diagonal jitter used on the single factorization retry.
const JITTER_REL: f64 = 1e-10;

/// A difference matrix of the given order: `(n - order) x n`, with row `r`
/// supported on columns `r ..= r + order`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMatrix {
    n: usize,
    order: usize,
    /// Row-major coefficients, `(n - order)` rows of `order + 1` entries.
    coeffs: Vec<f64>,
}

impl DiffMatrix {
    pub fn rows(&self) -> usize {
        self.n - self.order
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Coefficients of row `r`; the first entry sits in column `r`.
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.order + 1;
        &self.coeffs[r * w..(r + 1) * w]
    }

    /// Dense copy, for small-n oracle comparisons.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols()]; self.rows()];
        for r in 0..self.rows() {
            for (c, &v) in self.row(r).iter().enumerate() {
                out[r][r + c] = v;
            }
        }
        out
    }
}

/// Standard difference matrix of the given order, built by the recursion
/// `D^(k+1) = D^(1) · D^(k)` starting from the first-difference rows
/// `(1, -1)`.
pub fn standard_diff(n: usize, order: usize) -> Result<DiffMatrix> {
    if order == 0 {
        return Err(Error::InvalidDimension("difference order must be >= 1".into()));
    }
    if n <= order {
        return Err(Error::InvalidDimension(format!(
            "need n > order, got n = {n}, order = {order}"
        )));
    }
    let mut d = first_diff(n);
    for _ in 1..order {
        d = diff_step(&d, None);
    }
    Ok(d)
}

/// Grid-adjusted difference matrix for strictly increasing locations `x`
/// (Tibshirani's falling-factorial adjustment). Each recursion step scales
/// the current rows by `k / (x[j+k] - x[j])` before differencing, and the
/// order-1 matrix coincides with the standard one, as does the whole
/// operator on the grid `1, 2, ..., n`.
pub fn adjusted_diff(x: &[f64], order: usize) -> Result<DiffMatrix> {
    check_grid(x)?;
    if order == 0 {
        return Err(Error::InvalidDimension("difference order must be >= 1".into()));
    }
    let n = x.len();
    if n <= order {
        return Err(Error::InvalidDimension(format!(
            "need n > order, got n = {n}, order = {order}"
        )));
    }
    let mut d = first_diff(n);
    for k in 1..order {
        let scale: Vec<f64> = (0..n - k).map(|j| k as f64 / (x[j + k] - x[j])).collect();
        d = diff_step(&d, Some(&scale));
    }
    Ok(d)
}

fn first_diff(n: usize) -> DiffMatrix {
    let mut coeffs = Vec::with_capacity(2 * (n - 1));
    for _ in 0..n - 1 {
        coeffs.push(1.0);
        coeffs.push(-1.0);
    }
    DiffMatrix { n, order: 1, coeffs }
}

/// One recursion step: rows of the next-order matrix are
/// `s[r]·row_r - s[r+1]·row_{r+1}` (unit scales when `s` is absent).
fn diff_step(d: &DiffMatrix, scale: Option<&[f64]>) -> DiffMatrix {
    let n = d.n;
    let order = d.order + 1;
    let w_in = d.order + 1;
    let rows = n - order;
    let mut coeffs = vec![0.0; rows * (w_in + 1)];
    for r in 0..rows {
        let (s0, s1) = match scale {
            Some(s) => (s[r], s[r + 1]),
            None => (1.0, 1.0),
        };
        let hi = d.row(r);
        let lo = d.row(r + 1);
        let out = &mut coeffs[r * (w_in + 1)..(r + 1) * (w_in + 1)];
        // row r spans columns r..=r+order; hi starts at column r, lo at r+1.
        for c in 0..w_in {
            out[c] += s0 * hi[c];
        }
        for c in 0..w_in {
            out[c + 1] -= s1 * lo[c];
        }
    }
    DiffMatrix { n, order, coeffs }
}

fn check_grid(x: &[f64]) -> Result<()> {
    for i in 1..x.len() {
        if !(x[i] > x[i - 1]) || !x[i].is_finite() || !x[i - 1].is_finite() {
            return Err(Error::InvalidGrid(format!(
                "locations must be strictly increasing and finite; violated at index {i}"
            )));
        }
    }
    Ok(())
}

/// The square n×n operator: identity rows for the first k+1 coordinates,
/// difference rows below. Nonsingular by construction (lower banded with
/// nonzero diagonal).
#[derive(Debug, Clone)]
pub struct DifferenceOperator {
    n: usize,
    /// Number of identity rows, i.e. k+1 (equals n for the identity).
    head: usize,
    diff: Option<DiffMatrix>,
    grid: Option<Vec<f64>>,
}

/// Assemble the operator for trend order `k`, using the grid-adjusted
/// difference matrix when locations are supplied.
pub fn assemble_d(n: usize, k: usize, x: Option<&[f64]>) -> Result<DifferenceOperator> {
    if n <= k + 1 {
        return Err(Error::InvalidDimension(format!(
            "need n > k + 1, got n = {n}, k = {k}"
        )));
    }
    if let Some(x) = x {
        if x.len() != n {
            return Err(Error::InvalidGrid(format!(
                "grid length {} does not match n = {n}",
                x.len()
            )));
        }
    }
    let diff = match x {
        Some(x) => adjusted_diff(x, k + 1)?,
        None => standard_diff(n, k + 1)?,
    };
    Ok(DifferenceOperator {
        n,
        head: k + 1,
        diff: Some(diff),
        grid: x.map(|x| x.to_vec()),
    })
}

impl DifferenceOperator {
    /// The n×n identity, useful as a no-penalty operator.
    pub fn identity(n: usize) -> Self {
        DifferenceOperator { n, head: n, diff: None, grid: None }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// k+1: the order of the difference block (and the operator bandwidth).
    pub fn order(&self) -> usize {
        self.head
    }

    pub fn grid(&self) -> Option<&[f64]> {
        self.grid.as_deref()
    }

    /// Row `i` as `(start_col, coeffs)`.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        const ONE: [f64; 1] = [1.0];
        if i < self.head {
            (i, &ONE)
        } else {
            let r = i - self.head;
            (r, self.diff.as_ref().expect("non-identity operator").row(r))
        }
    }

    /// `D v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| {
                let (start, c) = self.row(i);
                c.iter().zip(&v[start..]).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Solve `D x = rhs` by forward substitution (D is lower banded with
    /// nonzero diagonal).
    pub fn solve_lower(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            let (start, c) = self.row(i);
            let mut s = rhs[i];
            for (j, &cj) in c.iter().enumerate().take(c.len() - 1) {
                s -= cj * x[start + j];
            }
            x[i] = s / c[c.len() - 1];
        }
        x
    }

    /// Dense copy, for small-n oracle comparisons.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            let (start, c) = self.row(i);
            for (j, &v) in c.iter().enumerate() {
                out[i][start + j] = v;
            }
        }
        out
    }
}

/// Symmetric banded matrix; stores the diagonal and `bw` sub-diagonals.
#[derive(Debug, Clone)]
pub struct SymBanded {
    n: usize,
    bw: usize,
    /// `data[i*(bw+1) + d]` holds entry (i, i−d).
    data: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBanded { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Entry (i, j); zero outside the band.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bw {
            0.0
        } else {
            self.data[hi * (self.bw + 1) + d]
        }
    }

    fn entry_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i >= j && i - j <= self.bw);
        &mut self.data[i * (self.bw + 1) + (i - j)]
    }

    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        *self.entry_mut(i.max(j), i.min(j)) += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        *self.entry_mut(i.max(j), i.min(j)) = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[i * (self.bw + 1)]).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for j in i.saturating_sub(self.bw)..=i {
                out[i][j] = self.at(i, j);
                out[j][i] = out[i][j];
            }
        }
        out
    }
}

/// A banded symmetric positive-definite system `A x = b`.
#[derive(Debug, Clone)]
pub struct PrecisionSystem {
    pub a: SymBanded,
    pub b: Vec<f64>,
}

/// Build `A = Dᵀ diag(inv_weights) D + diag(extra_diag)` banded; the shift
/// vector starts at zero and is filled by the caller.
pub fn assemble_precision(
    d: &DifferenceOperator,
    inv_weights: &[f64],
    extra_diag: &[f64],
) -> Result<PrecisionSystem> {
    let n = d.n();
    assert_eq!(inv_weights.len(), n);
    assert_eq!(extra_diag.len(), n);
    if let Some(i) = inv_weights.iter().position(|w| !(*w > 0.0)) {
        return Err(Error::Domain(format!(
            "inverse weight {} at index {i} is not strictly positive",
            inv_weights[i]
        )));
    }
    let mut a = SymBanded::zeros(n, d.order());
    for r in 0..n {
        let (start, c) = d.row(r);
        let m = inv_weights[r];
        for u in 0..c.len() {
            let mu = m * c[u];
            for v in 0..=u {
                a.add_at(start + u, start + v, mu * c[v]);
            }
        }
    }
    for (i, &e) in extra_diag.iter().enumerate() {
        if e != 0.0 {
            a.add_at(i, i, e);
        }
    }
    Ok(PrecisionSystem { a, b: vec![0.0; n] })
}

/// Banded LDLᵀ factorization of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct BandedLdl {
    n: usize,
    bw: usize,
    /// Unit lower factor, same band layout as [`SymBanded`].
    l: Vec<f64>,
    d: Vec<f64>,
}

impl BandedLdl {
    /// Factor `a`, retrying once with a small diagonal jitter
    /// (`1e-10 · trace(A)/n`) before reporting breakdown.
    pub fn factor(a: &SymBanded) -> Result<Self> {
        match Self::factor_once(a, 0.0) {
            Ok(f) => Ok(f),
            Err(_) => {
                let jitter = JITTER_REL * a.trace() / a.n() as f64;
                Self::factor_once(a, jitter)
            }
        }
    }

    fn factor_once(a: &SymBanded, jitter: f64) -> Result<Self> {
        let n = a.n();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = a.at(i, j);
                if i == j {
                    s += jitter;
                }
                for r in lo.max(j.saturating_sub(bw))..j {
                    s -= l[i * w + (i - r)] * l[j * w + (j - r)] * d[r];
                }
                if j < i {
                    l[i * w + (i - j)] = s / d[j];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NumericalBreakdown {
                            pivot: i,
                            detail: format!("nonpositive pivot {s}"),
                        });
                    }
                    d[i] = s;
                    l[i * w] = 1.0;
                }
            }
        }
        Ok(BandedLdl { n, bw, l, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn l_at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (i - j)]
    }

    /// Solve `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut x = rhs.to_vec();
        // forward: L y = rhs
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut s = x[i];
            for r in lo..i {
                s -= self.l_at(i, r) * x[r];
            }
            x[i] = s;
        }
        for i in 0..self.n {
            x[i] /= self.d[i];
        }
        // backward: Lᵀ x = z
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = x[i];
            for r in i + 1..=hi {
                s -= self.l_at(r, i) * x[r];
            }
            x[i] = s;
        }
        x
    }

    /// Turn an i.i.d. standard normal vector into a draw from
    /// `N(0, scale·A⁻¹)`, overwriting it in place.
    pub fn scaled_inverse_sqrt_apply(&self, eps: &mut [f64], scale: f64) {
        assert_eq!(eps.len(), self.n);
        let rs = scale.sqrt();
        for i in 0..self.n {
            eps[i] *= rs / self.d[i].sqrt();
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = eps[i];
            for r in i + 1..=hi {
                s -= self.l_at(r, i) * eps[r];
            }
            eps[i] = s;
        }
    }

    /// In-band entries of `A⁻¹` by the Takahashi recurrence, O(n·bw²).
    pub fn selected_inverse(&self) -> SymBanded {
        let n = self.n;
        let bw = self.bw;
        let mut s = SymBanded::zeros(n, bw);
        for j in (0..n).rev() {
            let hi = (j + bw).min(n - 1);
            let mut v = 1.0 / self.d[j];
            for r in j + 1..=hi {
                v -= self.l_at(r, j) * s.at(r, j);
            }
            s.set(j, j, v);
            for i in (j.saturating_sub(bw)..j).rev() {
                let hi_i = (i + bw).min(n - 1);
                let mut v = 0.0;
                for r in i + 1..=hi_i {
                    v -= self.l_at(r, i) * s.at(r, j);
                }
                s.set(j, i, v);
            }
        }
        s
    }
}

/// Mean, marginal variances and difference-row quadratic forms of a
/// Gaussian with banded precision.
#[derive(Debug, Clone)]
pub struct GaussianSummary {
    /// `A⁻¹ b`.
    pub mean: Vec<f64>,
    /// `(A⁻¹)_{ii}`.
    pub var_diag: Vec<f64>,
    /// `d_iᵀ A⁻¹ d_i` for each row `d_i` of the operator; the caller
    /// composes these with scale factors and mean outer-products.
    pub eta2: Vec<f64>,
}

/// Solve the system and read off the selected-inverse summaries without ever
/// forming a dense inverse.
pub fn solve_gaussian_summary(
    sys: &PrecisionSystem,
    d: &DifferenceOperator,
) -> Result<GaussianSummary> {
    let ldl = BandedLdl::factor(&sys.a)?;
    let mean = ldl.solve(&sys.b);
    let sinv = ldl.selected_inverse();
    let n = sys.a.n();
    let mut var_diag = Vec::with_capacity(n);
    for i in 0..n {
        var_diag.push(sinv.at(i, i));
    }
    let mut eta2 = Vec::with_capacity(n);
    for i in 0..n {
        let (start, c) = d.row(i);
        let mut q = 0.0;
        for u in 0..c.len() {
            for v in 0..c.len() {
                q += c[u] * c[v] * sinv.at(start + u, start + v);
            }
        }
        eta2.push(q);
    }
    Ok(GaussianSummary { mean, var_diag, eta2 })
}
