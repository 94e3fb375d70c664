//! Linear algebra of the frozen-coefficient Ornstein-Uhlenbeck transition.
//!
//! For a symmetric base matrix `a` and eigenvalues `lambda_i`, the
//! time-integrated covariance is
//!
//! ```text
//! a_ij(t) = a_ij * (1 - exp(-(lambda_i + lambda_j) t)) / (lambda_i + lambda_j)
//! ```
//!
//! (limit `a_ij * t` when `lambda_i + lambda_j = 0`). Whitening by the scalar
//! rates `G_ii(t) = 2 lambda_i / (1 - exp(-2 lambda_i t))` (or `1/t` for
//! `lambda_i = 0`) gives `ã(t) = G^{1/2} a(t) G^{1/2}`, whose spectrum stays
//! inside the spectral bounds of `a`. Inverses are written with capitals:
//! `A(t) = a(t)^{-1}`, `Ã(t) = ã(t)^{-1}`.
//!
//! Every inversion goes through a Cholesky factorisation after symmetric
//! averaging; a failed factorisation is reported, never regularised.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_offset_decay, DecayFit, ZERO_FLOOR};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// `(1 - exp(-s t)) / s`, i.e. `int_0^t exp(-s r) dr`, with the `s = 0` limit.
#[inline]
pub fn integrated_decay(s: f64, t: f64) -> f64 {
    if s == 0.0 {
        t
    } else {
        -(-s * t).exp_m1() / s
    }
}

/// Whitening rate `G(t) = 2 lambda / (1 - exp(-2 lambda t))`, `1/t` at `lambda = 0`.
pub fn rate_function(lambda: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain { what: "time", value: t });
    }
    if lambda < 0.0 {
        return Err(Error::Domain { what: "eigenvalue", value: lambda });
    }
    Ok(1.0 / integrated_decay(2.0 * lambda, t))
}

/// Left-hand side of the whitening Cauchy-Schwarz inequality
/// `G_ii^{1/2} int_0^t e^{-(l_i+l_j)s} ds G_jj^{1/2} <= 1`.
pub fn whitening_factor(li: f64, lj: f64, t: f64) -> f64 {
    integrated_decay(li + lj, t) / (integrated_decay(2.0 * li, t) * integrated_decay(2.0 * lj, t)).sqrt()
}

/// Symmetric average `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of the symmetrised matrix, or a definiteness error.
pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::Shape { expected: m.nrows(), got: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Definiteness { context: format!("{context}: non-finite entry") });
    }
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::Definiteness { context: context.to_string() })
}

/// Inverse of an SPD matrix (symmetrised).
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m, context)?.inverse()))
}

/// `log det` from a Cholesky factor.
pub fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn spd_logdet(m: &DMatrix<f64>, context: &str) -> Result<f64> {
    Ok(chol_logdet(&cholesky(m, context)?))
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    (ev.min(), ev.max())
}

/// Spectral (operator 2-) norm of a symmetric matrix.
pub fn sym_operator_norm(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eigen_range(m);
    lo.abs().max(hi.abs())
}

/// Operator 2-norm of a general square matrix via singular values.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// `max(sup_i sum_j |m_ij|, sup_j sum_i |m_ij|)`; dominates the operator norm.
pub fn schur_norm(m: &DMatrix<f64>) -> f64 {
    let rows = (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let cols = (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    rows.max(cols)
}

/// `a(t)` without the whitening and inverse machinery.
pub fn time_integrated(base: &DMatrix<f64>, lambdas: &[f64], t: f64) -> DMatrix<f64> {
    let n = base.nrows();
    DMatrix::from_fn(n, n, |i, j| base[(i, j)] * integrated_decay(lambdas[i] + lambdas[j], t))
}

/// Time-integrated covariance bundle for one frozen base matrix.
#[derive(Debug, Clone)]
pub struct TimeCov {
    pub t: f64,
    pub base: DMatrix<f64>,
    pub lambdas: Vec<f64>,
    /// `G_ii(t)`.
    pub rates: Vec<f64>,
    pub a_t: DMatrix<f64>,
    pub a_tilde: DMatrix<f64>,
    /// `A(t) = a(t)^{-1}`.
    pub a_t_inv: DMatrix<f64>,
    /// `Ã(t) = ã(t)^{-1}`.
    pub a_tilde_inv: DMatrix<f64>,
    pub logdet_a_t: f64,
    pub logdet_a_tilde: f64,
}

/// Build [`TimeCov`] for a symmetric positive definite `base`.
///
/// `lambdas` supplies `lambda_0, lambda_1, ...` and must be at least as long
/// as `base` is wide.
pub fn time_integrated_cov(base: &DMatrix<f64>, lambdas: &[f64], t: f64) -> Result<TimeCov> {
    if !(t > 0.0) {
        return Err(Error::Domain { what: "time", value: t });
    }
    let n = base.nrows();
    if !base.is_square() {
        return Err(Error::Shape { expected: n, got: base.ncols() });
    }
    if lambdas.len() < n {
        return Err(Error::Shape { expected: n, got: lambdas.len() });
    }
    let base = symmetrize(base);
    cholesky(&base, "base matrix")?;
    let lambdas = lambdas[..n].to_vec();
    let rates: Vec<f64> = lambdas.iter().map(|&l| 1.0 / integrated_decay(2.0 * l, t)).collect();
    let a_t = time_integrated(&base, &lambdas, t);
    let a_tilde = DMatrix::from_fn(n, n, |i, j| rates[i].sqrt() * a_t[(i, j)] * rates[j].sqrt());
    let ch_t = cholesky(&a_t, "a(t)")?;
    let ch_tilde = cholesky(&a_tilde, "whitened a(t)")?;
    Ok(TimeCov {
        t,
        logdet_a_t: chol_logdet(&ch_t),
        logdet_a_tilde: chol_logdet(&ch_tilde),
        a_t_inv: symmetrize(&ch_t.inverse()),
        a_tilde_inv: symmetrize(&ch_tilde.inverse()),
        base,
        lambdas,
        rates,
        a_t,
        a_tilde,
    })
}

impl TimeCov {
    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    /// `‖a(t) A(t) - I‖_s`.
    pub fn inversion_residual(&self) -> f64 {
        let n = self.dim();
        schur_norm(&(&self.a_t * &self.a_t_inv - DMatrix::identity(n, n)))
    }

    /// Smallest margin of `A_jj(t) >= (2 Λ1)^{-1} (1 + lambda_j t) / t`.
    pub fn diagonal_lower_bound_margin(&self, lambda1: f64) -> f64 {
        (0..self.dim())
            .map(|j| {
                let l = (1.0 + self.lambdas[j] * self.t) / self.t;
                self.a_t_inv[(j, j)] - l / (2.0 * lambda1)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest margin of `|ã_ij(t)| <= kappa / (1 + |i-j|^gamma)`.
    pub fn tilde_decay_margin(&self, kappa: f64, gamma: f64) -> f64 {
        let n = self.dim();
        let mut margin = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let d = (i as f64 - j as f64).abs();
                margin = margin.min(kappa / (1.0 + d.powf(gamma)) - self.a_tilde[(i, j)].abs());
            }
        }
        margin
    }
}

/// Reduce an `(m+1) x (m+1)` inverse to `B_ij = A_ij - A_{i,m+1} A_{j,m+1} / A_{m+1,m+1}`.
///
/// `B^{-1}` equals the leading `m x m` block of `A^{-1}`.
pub fn schur_complement_reduce(a_inv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_inv.nrows();
    if n < 2 || !a_inv.is_square() {
        return Err(Error::Shape { expected: 2.max(n), got: a_inv.ncols() });
    }
    let m = n - 1;
    let corner = a_inv[(m, m)];
    if !(corner > 0.0) {
        return Err(Error::Singular(corner));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| a_inv[(i, j)] - a_inv[(i, m)] * a_inv[(j, m)] / corner))
}

/// `log Q_m(w, C) = -(m/2) log 2 pi + (1/2) log det C - <w, C w>/2`.
pub fn gaussian_log_density(w: &DVector<f64>, c: &DMatrix<f64>) -> Result<f64> {
    if w.len() != c.nrows() {
        return Err(Error::Shape { expected: c.nrows(), got: w.len() });
    }
    let ch = cholesky(c, "precision matrix")?;
    let lw = ch.l().transpose() * w;
    Ok(-0.5 * w.len() as f64 * LN_2PI + 0.5 * chol_logdet(&ch) - 0.5 * lw.norm_squared())
}

/// `Q_m(w, C)`; the exponential is taken only at the end.
pub fn gaussian_density(w: &DVector<f64>, c: &DMatrix<f64>) -> Result<f64> {
    gaussian_log_density(w, c).map(f64::exp)
}

/// Mean and variance of the last coordinate given the first `m`, for the
/// Gaussian with precision `a_inv` (size `m+1`).
///
/// `w` holds at least the first `m` coordinates; extra entries are ignored.
pub fn conditional_gaussian_params(a_inv: &DMatrix<f64>, w: &[f64]) -> Result<(f64, f64)> {
    let n = a_inv.nrows();
    if n == 0 || !a_inv.is_square() {
        return Err(Error::Shape { expected: 1, got: n });
    }
    let m = n - 1;
    if w.len() < m {
        return Err(Error::Shape { expected: m, got: w.len() });
    }
    let corner = a_inv[(m, m)];
    if !(corner > 0.0) {
        return Err(Error::Definiteness { context: format!("corner entry {corner}") });
    }
    let mu = -(0..m).map(|i| w[i] * a_inv[(i, m)]).sum::<f64>() / corner;
    Ok((mu, 1.0 / corner))
}

/// Both sides of the perturbation inequalities for two base matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioBoundsReport {
    pub lambda0: f64,
    pub schur_diff: f64,
    pub tilde_schur_diff: f64,
    pub tilde_op_diff: f64,
    pub inverse_op_diff: f64,
    pub theta: f64,
    pub phi: f64,
    pub det_ratio_deviation: f64,
    pub density_ratio_deviation: f64,
}

impl RatioBoundsReport {
    /// `‖a-b‖_s - ‖ã-b̃‖_s` (must be >= 0).
    pub fn tilde_margin(&self) -> f64 {
        self.schur_diff - self.tilde_schur_diff
    }

    /// `‖ã-b̃‖_s - ‖ã-b̃‖` (must be >= 0).
    pub fn schur_dominance_margin(&self) -> f64 {
        self.tilde_schur_diff - self.tilde_op_diff
    }

    /// `Λ0^{-2} ‖a-b‖_s - ‖Ã-B̃‖` (must be >= 0).
    pub fn inverse_margin(&self) -> f64 {
        self.schur_diff / (self.lambda0 * self.lambda0) - self.inverse_op_diff
    }

    /// `θ e^θ - |det b̃ / det ã - 1|` (must be >= 0).
    pub fn determinant_margin(&self) -> f64 {
        self.theta * self.theta.exp() - self.det_ratio_deviation
    }

    /// Smallest constant `c` with `|Q(w,Ã)/Q(w,B̃) - 1| <= c (φ + θ)`.
    pub fn required_density_constant(&self) -> f64 {
        let s = self.phi + self.theta;
        if s == 0.0 {
            0.0
        } else {
            self.density_ratio_deviation / s
        }
    }

    /// The fully explicit inequalities hold with margin `>= -tol`.
    pub fn explicit_bounds_hold(&self, tol: f64) -> bool {
        self.tilde_margin() >= -tol
            && self.schur_dominance_margin() >= -tol
            && self.inverse_margin() >= -tol
            && self.determinant_margin() >= -tol
    }
}

/// Evaluate the whitened perturbation, determinant-ratio and density-ratio
/// bounds for `a`, `b` at time `t` and point `w`.
///
/// `lambda0` defaults to the smallest eigenvalue of `a` and `b`; a supplied
/// value above that is a hypothesis violation.
pub fn ratio_bounds_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lambdas: &[f64],
    t: f64,
    w: &DVector<f64>,
    lambda0: Option<f64>,
) -> Result<RatioBoundsReport> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { expected: a.nrows(), got: b.nrows() });
    }
    let m = a.nrows();
    let min_eig = eigen_range(a).0.min(eigen_range(b).0);
    let lambda0 = match lambda0 {
        Some(l) if l > min_eig * (1.0 + 1e-12) => {
            return Err(Error::Hypothesis(format!("declared Λ0 = {l} exceeds smallest eigenvalue {min_eig}")))
        }
        Some(l) => l,
        None => min_eig,
    };
    if !(lambda0 > 0.0) {
        return Err(Error::Definiteness { context: "Λ0 must be positive".into() });
    }
    let ta = time_integrated_cov(a, lambdas, t)?;
    let tb = time_integrated_cov(b, lambdas, t)?;
    let schur_diff = schur_norm(&(a - b));
    let dtilde = &ta.a_tilde - &tb.a_tilde;
    let theta = m as f64 * schur_diff / lambda0;
    let phi = w.norm_squared() * schur_diff / (lambda0 * lambda0);
    let det_ratio = (tb.logdet_a_tilde - ta.logdet_a_tilde).exp();
    let qa = gaussian_log_density(w, &ta.a_tilde_inv)?;
    let qb = gaussian_log_density(w, &tb.a_tilde_inv)?;
    Ok(RatioBoundsReport {
        lambda0,
        schur_diff,
        tilde_schur_diff: schur_norm(&dtilde),
        tilde_op_diff: sym_operator_norm(&dtilde),
        inverse_op_diff: sym_operator_norm(&(&ta.a_tilde_inv - &tb.a_tilde_inv)),
        theta,
        phi,
        det_ratio_deviation: (det_ratio - 1.0).abs(),
        density_ratio_deviation: ((qa - qb).exp() - 1.0).abs(),
    })
}

/// Largest required density-ratio constant among reports with `θ, φ < bound`.
pub fn density_ratio_constant(reports: &[RatioBoundsReport], bound: f64) -> f64 {
    reports
        .iter()
        .filter(|r| r.theta < bound && r.phi < bound)
        .map(RatioBoundsReport::required_density_constant)
        .fold(0.0, f64::max)
}

/// Per-diagonal maxima `max_i |m_{i,i+d}|` (over both triangles) for `d = 1..n`.
pub fn diagonal_maxima(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (1..n)
        .map(|d| (0..n - d).map(|i| m[(i, i + d)].abs().max(m[(i + d, i)].abs())).fold(0.0, f64::max))
        .collect()
}

/// Off-diagonal decay fit of `|m_ij| <= c / (1 + |i-j|^gamma)`.
///
/// The exponent comes from a free fit of the per-diagonal maxima to the
/// offset law; `constant` is the smallest `c` making the envelope hold with
/// the declared `gamma`. Passes when the fitted exponent is at least
/// `gamma - 0.25`. A matrix with numerically zero off-diagonals is
/// degenerate and passes.
pub fn jaffard_decay_fit(m: &DMatrix<f64>, gamma: f64) -> DecayFit {
    let maxima = diagonal_maxima(m);
    let dists: Vec<f64> = (1..=maxima.len()).map(|d| d as f64).collect();
    let Some((q, _, resid)) = fit_offset_decay(&dists, &maxima) else {
        return DecayFit::degenerate();
    };
    let diag = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let envelope = dists
        .iter()
        .zip(&maxima)
        .filter(|(_, v)| **v > ZERO_FLOOR)
        .map(|(d, v)| v * (1.0 + d.powf(gamma)))
        .fold(diag, f64::max);
    DecayFit { exponent: q, constant: envelope, max_residual_ratio: resid, pass: true }
        .with_min_exponent(gamma - 0.25)
}

/// Constants of a dimension sweep agree within a factor of `ratio`.
pub fn constants_stable(fits: &[DecayFit], ratio: f64) -> bool {
    let cs: Vec<f64> = fits.iter().filter(|f| !f.is_degenerate()).map(|f| f.constant).collect();
    if cs.is_empty() {
        return true;
    }
    let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cs.iter().cloned().fold(0.0, f64::max);
    lo > 0.0 && hi / lo <= ratio
}

/// Row-major CSV with header `i,j,value`.
pub fn write_matrix_csv<W: std::io::Write>(m: &DMatrix<f64>, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["i", "j", "value"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            wtr.serialize((i, j, m[(i, j)]))?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Symmetric Toeplitz matrix from its first row.
pub fn toeplitz(first_row: &[f64]) -> DMatrix<f64> {
    let n = first_row.len();
    DMatrix::from_fn(n, n, |i, j| first_row[i.abs_diff(j)])
}
