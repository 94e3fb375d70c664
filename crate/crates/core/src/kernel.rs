//! The Gaussian-mixture kernel
//!
//! ```text
//! N_K(t, x, y) = Q_K(y - x', A(y, t)),   x'_i = exp(-lambda_i t) x_i,
//! ```
//!
//! whose covariance is frozen at the *target* `y`. It is not a probability
//! density in `y`; its mass, moments and `x`-derivatives are estimated here by
//! importance sampling from the Gaussian frozen at `x`.
//!
//! The kernel lives on the modes `1..=K` (all with `lambda > 0`). States keep
//! their full length `K + 1` so the field can be evaluated; the mode-0
//! coordinate of `y` is set to that of `x` and is not integrated over. Mode
//! indices `j, k` below are the basis indices `1..=K`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SpectralState;
use crate::error::{Error, Result};
use crate::fit::fit_power_law;
use crate::operators::CovarianceField;
use crate::ou::{chol_logdet, cholesky, rate_function, time_integrated, LN_2PI};
use crate::stats::{batch_means, effective_sample_size, stream};

/// Default `zeta` for [`cutoff_index`].
pub const DEFAULT_ZETA: f64 = 4.0;
/// Smallest sample count accepted by the estimators.
pub const MIN_SAMPLES: usize = 10_000;
/// Base finite-difference step, in units of the transition standard deviation
/// of each coordinate.
pub const FD_STEP: f64 = 1e-3;

/// `x' = e^{-lambda t} x`, `w = y - x'` and the whitened `w' = G(t)^{1/2} w`
/// (`w`, `w'` over the modes `1..=K`).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPoint {
    pub t: f64,
    pub x: SpectralState,
    pub y: SpectralState,
    pub x_prime: SpectralState,
    pub w: DVector<f64>,
    pub w_prime: DVector<f64>,
}

impl KernelPoint {
    pub fn new(t: f64, x: &SpectralState, y: &SpectralState, lambdas: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Shape { expected: x.len(), got: y.len() });
        }
        if x.len() < 2 {
            return Err(Error::Shape { expected: 2, got: x.len() });
        }
        if lambdas.len() < x.len() {
            return Err(Error::Shape { expected: x.len(), got: lambdas.len() });
        }
        let k = x.len() - 1;
        let x_prime = decay_state(x, lambdas, t);
        let w = DVector::from_fn(k, |i, _| y.coeffs[i + 1] - x_prime.coeffs[i + 1]);
        let rates = lambdas[1..=k].iter().map(|&l| rate_function(l, t)).collect::<Result<Vec<_>>>()?;
        let w_prime = DVector::from_fn(k, |i, _| rates[i].sqrt() * w[i]);
        Ok(KernelPoint { t, x: x.clone(), y: y.clone(), x_prime, w, w_prime })
    }
}

/// `x'_i = e^{-lambda_i t} x_i`.
pub fn decay_state(x: &SpectralState, lambdas: &[f64], t: f64) -> SpectralState {
    SpectralState::new(x.coeffs.iter().zip(lambdas).map(|(v, l)| (-l * t).exp() * v).collect())
}

/// Cholesky factor of the `1..=K` block of `a(z, t)` for the field frozen at `z`.
fn frozen_factor(field: &CovarianceField, z: &SpectralState, t: f64) -> Result<Cholesky<f64, Dyn>> {
    let full = field.covariance_matrix(z)?;
    let k = field.spec().k();
    let base = full.view((1, 1), (k, k)).into_owned();
    let a_t = time_integrated(&base, &field.spec().lambdas()[1..], t);
    cholesky(&a_t, "a(y, t)").map_err(|e| {
        log::error!("covariance not positive definite at state {:?}", z.coeffs);
        e
    })
}

/// `log Q(w, a^{-1})` from a Cholesky factor of `a`.
fn log_q(ch: &Cholesky<f64, Dyn>, w: &DVector<f64>) -> f64 {
    let v = ch.l().solve_lower_triangular(w).expect("triangular factor is nonsingular");
    -0.5 * w.len() as f64 * LN_2PI - 0.5 * chol_logdet(ch) - 0.5 * v.norm_squared()
}

/// `log N_K(t, x, y)`.
pub fn kernel_log_density(t: f64, x: &SpectralState, y: &SpectralState, field: &CovarianceField) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain { what: "time", value: t });
    }
    let p = KernelPoint::new(t, x, y, field.spec().lambdas())?;
    Ok(log_q(&frozen_factor(field, y, t)?, &p.w))
}

/// `N_K(t, x, y)`.
pub fn kernel_density(t: f64, x: &SpectralState, y: &SpectralState, field: &CovarianceField) -> Result<f64> {
    kernel_log_density(t, x, y, field).map(f64::exp)
}

/// `S_jk(w, A) = (A w)_j (A w)_k - A_jk`.
pub fn second_derivative_factor(w: &DVector<f64>, a_inv: &DMatrix<f64>, j: usize, k: usize) -> Result<f64> {
    let n = a_inv.nrows();
    if j >= n || k >= n {
        return Err(Error::Range { index: j.max(k), max: n.saturating_sub(1) });
    }
    if w.len() != n {
        return Err(Error::Shape { expected: n, got: w.len() });
    }
    let aw = a_inv * w;
    Ok(aw[j] * aw[k] - a_inv[(j, k)])
}

/// Analytic `D_jk N_K = e^{-(lambda_j + lambda_k) t} S_jk(w, A(y, t)) N_K`
/// (derivatives in `x`, modes `j, k >= 1`).
pub fn dij_kernel_analytic(
    t: f64,
    x: &SpectralState,
    y: &SpectralState,
    field: &CovarianceField,
    j: usize,
    k: usize,
) -> Result<f64> {
    check_modes(field, j, k)?;
    let p = KernelPoint::new(t, x, y, field.spec().lambdas())?;
    let ch = frozen_factor(field, y, t)?;
    let a_inv = ch.inverse();
    let s = second_derivative_factor(&p.w, &a_inv, j - 1, k - 1)?;
    let l = field.spec().lambdas();
    Ok((-(l[j] + l[k]) * t).exp() * s * log_q(&ch, &p.w).exp())
}

/// Central finite difference of `D_jk N_K` in `x` with steps
/// `h (1 + |x_j|)` and one Richardson level.
pub fn dij_kernel_fd(
    t: f64,
    x: &SpectralState,
    y: &SpectralState,
    field: &CovarianceField,
    j: usize,
    k: usize,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain { what: "finite-difference step", value: h });
    }
    check_modes(field, j, k)?;
    let n = x.len();
    // The covariance is frozen at y, so only x' moves.
    let ch = frozen_factor(field, y, t)?;
    let lambdas = field.spec().lambdas();
    let eval = |dj: f64, dk: f64| -> f64 {
        let mut xs = x.clone();
        xs.coeffs[j] += dj;
        xs.coeffs[k] += dk;
        let xp = decay_state(&xs, lambdas, t);
        let w = DVector::from_fn(n - 1, |i, _| y.coeffs[i + 1] - xp.coeffs[i + 1]);
        log_q(&ch, &w).exp()
    };
    // Steps are taken in units of the transition spread of x', so high
    // modes (where x' barely moves with x) still resolve above roundoff.
    let step = |m: usize, s: f64| s * (lambdas[m] * t).exp() * crate::ou::integrated_decay(2.0 * lambdas[m], t).sqrt();
    let stencil = |s: f64| -> f64 {
        let hj = step(j, s);
        if j == k {
            (eval(hj, 0.0) - 2.0 * eval(0.0, 0.0) + eval(-hj, 0.0)) / (hj * hj)
        } else {
            let hk = step(k, s);
            (eval(hj, hk) - eval(hj, -hk) - eval(-hj, hk) + eval(-hj, -hk)) / (4.0 * hj * hk)
        }
    };
    Ok((4.0 * stencil(h / 2.0) - stencil(h)) / 3.0)
}

fn check_modes(field: &CovarianceField, j: usize, k: usize) -> Result<()> {
    let kmax = field.spec().k();
    for m in [j, k] {
        if m == 0 || m > kmax {
            return Err(Error::Range { index: m, max: kmax });
        }
    }
    Ok(())
}

/// `J = ceil((zeta log(1/t + 1) / t)^{1/2})`.
pub fn cutoff_index(zeta: f64, t: f64) -> Result<usize> {
    if !(zeta > 0.0) {
        return Err(Error::Domain { what: "zeta", value: zeta });
    }
    if !(t > 0.0) {
        return Err(Error::Domain { what: "time", value: t });
    }
    Ok((zeta * (1.0 / t).ln_1p() / t).sqrt().ceil() as usize)
}

pub use crate::operators::truncate_state;

/// A Monte Carlo estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Kish effective sample size of the importance weights.
    pub ess: f64,
    pub n_samples: usize,
}

impl McEstimate {
    /// `stderr <= fraction * |estimate|`.
    pub fn precise(&self, fraction: f64) -> bool {
        self.stderr <= fraction * self.estimate.abs()
    }
}

/// What each importance sample sees.
pub struct SampleView<'a> {
    pub t: f64,
    /// Full-length state (mode 0 copied from `x`).
    pub y: &'a SpectralState,
    /// `y - x'` on the modes `1..=K`; `w[j - 1]` belongs to mode `j`.
    pub w: &'a DVector<f64>,
    /// Cholesky factor of the `1..=K` block of `a(y, t)`.
    pub factor: &'a Cholesky<f64, Dyn>,
    /// `lambda_1..lambda_K`.
    pub lambdas: &'a [f64],
}

impl SampleView<'_> {
    /// `A(y, t) = a(y, t)^{-1}`.
    pub fn precision(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }
}

/// Importance-sampled `int g(y) N_K(t, x, y) dy` with proposal
/// `N(x', a(x, t))`. `tag` separates the random streams of different
/// integrands drawn with the same seed.
pub fn importance_integral<G>(
    t: f64,
    x: &SpectralState,
    field: &CovarianceField,
    n_samples: usize,
    seed: u64,
    tag: u64,
    g: G,
) -> Result<McEstimate>
where
    G: Fn(&SampleView<'_>) -> f64 + Sync,
{
    if !(t > 0.0) {
        return Err(Error::Domain { what: "time", value: t });
    }
    if n_samples < MIN_SAMPLES {
        return Err(Error::InsufficientSample { got: n_samples, needed: MIN_SAMPLES });
    }
    if x.len() != field.dim() {
        return Err(Error::Shape { expected: field.dim(), got: x.len() });
    }
    let dim = field.spec().k();
    let lambdas = &field.spec().lambdas()[1..];
    let proposal = frozen_factor(field, x, t)?;
    let proposal_logdet = chol_logdet(&proposal);
    let x_prime = decay_state(x, field.spec().lambdas(), t);
    let fixed = field.is_state_independent();

    let draws: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let mut rng = stream(seed, &[tag, i as u64]);
            let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let w = proposal.l() * &z;
            let y = SpectralState::new(
                std::iter::once(x.coeffs[0]).chain(x_prime.coeffs[1..].iter().zip(w.iter()).map(|(a, b)| a + b)).collect(),
            );
            let log_prop = -0.5 * dim as f64 * LN_2PI - 0.5 * proposal_logdet - 0.5 * z.norm_squared();
            let owned;
            let factor = if fixed {
                &proposal
            } else {
                owned = frozen_factor(field, &y, t)?;
                &owned
            };
            let weight = (log_q(factor, &w) - log_prop).exp();
            let view = SampleView { t, y: &y, w: &w, factor, lambdas };
            Ok((weight, weight * g(&view)))
        })
        .collect::<Result<Vec<_>>>()?;

    let weights: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let values: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let (estimate, stderr) = batch_means(&values);
    let ess = effective_sample_size(&weights);
    if ess < 0.01 * n_samples as f64 {
        log::warn!("ill-conditioned proposal: effective sample size {ess:.0} of {n_samples}");
    }
    Ok(McEstimate { estimate, stderr, ess, n_samples })
}

/// `int N_K(t, x, y) dy`.
pub fn total_mass_mc(t: f64, x: &SpectralState, field: &CovarianceField, n_samples: usize, seed: u64) -> Result<McEstimate> {
    importance_integral(t, x, field, n_samples, seed, 0, |_| 1.0)
}

/// `int |w_j|^{2p} N_K(t, x, y) dy`.
pub fn moment_mc(
    t: f64,
    x: &SpectralState,
    field: &CovarianceField,
    j: usize,
    p: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(p >= 0.0) {
        return Err(Error::Domain { what: "moment order", value: p });
    }
    check_modes(field, j, j)?;
    if p == 0.0 {
        return total_mass_mc(t, x, field, n_samples, seed);
    }
    importance_integral(t, x, field, n_samples, seed, 0, |v| v.w[j - 1].abs().powf(2.0 * p))
}

/// `sum_{j=1}^{J} e^{-(lambda_j + lambda_{j+l}) t} S_{j,j+l}(w, A(y, t))`,
/// restricted to `j + l <= K`.
fn diagonal_sum(v: &SampleView<'_>, ell: usize, cutoff: usize) -> f64 {
    let k = v.w.len();
    let a_inv = v.precision();
    let aw = &a_inv * v.w;
    (1..=cutoff)
        .take_while(|j| j + ell <= k)
        .map(|j| {
            let (p, q) = (j - 1, j + ell - 1);
            (-(v.lambdas[p] + v.lambdas[q]) * v.t).exp() * (aw[p] * aw[q] - a_inv[(p, q)])
        })
        .sum()
}

/// `int (sum_{j <= J} e^{-(lambda_j + lambda_{j+l}) t} S_{j,j+l})^2 N_K dy`
/// with `J = cutoff_index(zeta, t)`.
pub fn diagonal_sum_mc(
    t: f64,
    x: &SpectralState,
    field: &CovarianceField,
    ell: usize,
    zeta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let cutoff = cutoff_index(zeta, t)?;
    if ell > cutoff {
        return Err(Error::Range { index: ell, max: cutoff });
    }
    importance_integral(t, x, field, n_samples, seed, 0, |v| diagonal_sum(v, ell, cutoff).powi(2))
}

/// `int |sum_{i,j=1}^K (a_ij(x) - a_ij(y)) D_ij N_K(t, x, y)| dy` with the
/// analytic derivative form.
pub fn perturbation_integral_mc(
    t: f64,
    x: &SpectralState,
    field: &CovarianceField,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    field.toeplitz_split(x)?;
    let ax = field.covariance_matrix(x)?;
    let fixed = field.is_state_independent();
    importance_integral(t, x, field, n_samples, seed, 0, |v| {
        if fixed {
            return 0.0;
        }
        let Ok(ay) = field.covariance_matrix(v.y) else {
            return f64::NAN;
        };
        let a_inv = v.precision();
        let aw = &a_inv * v.w;
        let n = v.w.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = ax[(i + 1, j + 1)] - ay[(i + 1, j + 1)];
                if d != 0.0 {
                    total += d * (-(v.lambdas[i] + v.lambdas[j]) * v.t).exp() * (aw[i] * aw[j] - a_inv[(i, j)]);
                }
            }
        }
        total.abs()
    })
}

/// How a fitted slope is judged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlopeTarget {
    Within { target: f64, tolerance: f64 },
    AtMost { bound: f64 },
    AtLeast { bound: f64 },
}

impl SlopeTarget {
    pub fn accepts(&self, slope: f64) -> bool {
        match *self {
            SlopeTarget::Within { target, tolerance } => (slope - target).abs() <= tolerance,
            SlopeTarget::AtMost { bound } => slope <= bound,
            SlopeTarget::AtLeast { bound } => slope >= bound,
        }
    }
}

/// A log-log scaling probe over a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    /// `(parameter, estimate, stderr)`.
    pub probe_values: Vec<(f64, f64, f64)>,
    pub fitted_slope: f64,
    pub target: SlopeTarget,
    /// Every stderr is at most 10% of its estimate.
    pub precise: bool,
    pub pass: bool,
}

impl ScalingReport {
    pub fn new(probe_values: Vec<(f64, f64, f64)>, target: SlopeTarget) -> Result<Self> {
        let pairs: Vec<(f64, f64)> = probe_values.iter().map(|p| (p.0, p.1)).collect();
        let fitted_slope = fit_power_law(&pairs)?.exponent;
        let precise = probe_values.iter().all(|p| p.2 <= 0.1 * p.1.abs());
        let pass = precise && target.accepts(fitted_slope);
        Ok(ScalingReport { probe_values, fitted_slope, target, precise, pass })
    }

    /// Sweep data as CSV `param,estimate,stderr`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["param", "estimate", "stderr"])?;
        for (p, e, s) in &self.probe_values {
            wtr.serialize((p, e, s))?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::operators::CoefficientOperator;
    use std::f64::consts::PI;

    fn constant_field(k: usize, c: f64) -> CovarianceField {
        CovarianceField::new(CoefficientOperator::constant(c), BasisSpec::new(k, 256).unwrap()).unwrap()
    }

    fn ou_density_1d(t: f64, x: f64, y: f64, lambda: f64, a: f64) -> f64 {
        let var = a * (1.0 - (-2.0 * lambda * t).exp()) / (2.0 * lambda);
        let m = (-lambda * t).exp() * x;
        (-(y - m).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff_index(2.0, 0.01).unwrap(), 31);
        assert_eq!(cutoff_index(1.0, 1.0).unwrap(), 1);
        let js: Vec<usize> = [0.001, 0.01, 0.1, 1.0].iter().map(|t| cutoff_index(4.0, *t).unwrap()).collect();
        assert!(js.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn density_at_mean_of_constant_field() {
        let field = constant_field(3, 1.5);
        let t = 0.2;
        let x = SpectralState::new(vec![0.1, -0.4, 0.3, 0.2]);
        let y = decay_state(&x, field.spec().lambdas(), t);
        let got = kernel_density(t, &x, &y, &field).unwrap();
        let want: f64 = field
            .spec()
            .lambdas()
            .iter()
            .skip(1)
            .map(|&l| 1.0 / (2.0 * PI * 2.25 * crate::ou::integrated_decay(2.0 * l, t)).sqrt())
            .product();
        assert!((got / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_ou_density() {
        let field = constant_field(1, 1.0);
        let mut rng = stream(5, &[]);
        use rand::Rng;
        for _ in 0..20 {
            let t = rng.random_range(0.01..1.0);
            let x = SpectralState::new(vec![rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)]);
            let y = SpectralState::new(vec![rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)]);
            let l1 = field.spec().lambdas()[1];
            let want = ou_density_1d(t, x.coeffs[1], y.coeffs[1], l1, 1.0);
            let got = kernel_density(t, &x, &y, &field).unwrap();
            assert!((got / want - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn second_derivative_factor_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(second_derivative_factor(&DVector::zeros(3), &id, 1, 1).unwrap(), -1.0);
        let e1 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(second_derivative_factor(&e1, &id, 1, 1).unwrap(), 0.0);
        assert!(second_derivative_factor(&e1, &id, 3, 0).is_err());
    }

    #[test]
    fn finite_differences_of_constant_field() {
        let field = constant_field(1, 1.0);
        let t = 0.3;
        let x = SpectralState::new(vec![0.2, 0.5]);
        let y = SpectralState::new(vec![-0.1, 0.3]);
        let l1 = field.spec().lambdas()[1];
        // Closed-form d^2/dx^2 of the 1-D OU density in x_1.
        let var = crate::ou::integrated_decay(2.0 * l1, t);
        let e = (-l1 * t).exp();
        let w = y.coeffs[1] - e * x.coeffs[1];
        let want = ou_density_1d(t, x.coeffs[1], y.coeffs[1], l1, 1.0) * e * e * (w * w / (var * var) - 1.0 / var);
        let fd = dij_kernel_fd(t, &x, &y, &field, 1, 1, FD_STEP).unwrap();
        let an = dij_kernel_analytic(t, &x, &y, &field, 1, 1).unwrap();
        assert!((fd - want).abs() < 1e-6);
        assert!((an / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn off_diagonal_derivative_vanishes_at_mean() {
        let field = constant_field(3, 1.0);
        let t = 0.1;
        let x = SpectralState::new(vec![0.3, 0.1, -0.2, 0.4]);
        let y = decay_state(&x, field.spec().lambdas(), t);
        assert_eq!(dij_kernel_analytic(t, &x, &y, &field, 1, 2).unwrap(), 0.0);
        let a = dij_kernel_fd(t, &x, &y, &field, 1, 2, FD_STEP).unwrap();
        let b = dij_kernel_fd(t, &x, &y, &field, 2, 1, FD_STEP).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn constant_field_mass_and_moment() {
        let field = constant_field(4, 1.0);
        let x = SpectralState::new(vec![0.5, 0.2, -0.3, 0.1, 0.0]);
        let m = total_mass_mc(0.1, &x, &field, MIN_SAMPLES, 1).unwrap();
        assert!((m.estimate - 1.0).abs() <= 1e-12);
        let t = 0.05;
        let mom = moment_mc(t, &x, &field, 2, 1.0, 20_000, 2).unwrap();
        let want = crate::ou::integrated_decay(2.0 * field.spec().lambdas()[2], t);
        assert!((mom.estimate - want).abs() <= 3.0 * mom.stderr, "{mom:?} vs {want}");
        assert!(total_mass_mc(0.1, &x, &field, 100, 1).is_err());
    }

    #[test]
    fn diagonal_sum_against_quadrature() {
        // K = 1, l = 0: only j = 1 contributes, so the integrand is
        // e^{-4 lambda t} S_11^2 N with S_11 = (w/v)^2 - 1/v in mode 1.
        let field = constant_field(1, 1.0);
        let t = 0.1;
        let x = SpectralState::new(vec![0.0, 0.4]);
        let l = field.spec().lambdas()[1];
        let v = crate::ou::integrated_decay(2.0 * l, t);
        let n = 200_000;
        let sd = v.sqrt();
        let h = 16.0 * sd / n as f64;
        let quad: f64 = (0..n)
            .map(|i| {
                let w = -8.0 * sd + (i as f64 + 0.5) * h;
                let s = w * w / (v * v) - 1.0 / v;
                (-4.0 * l * t).exp() * s * s * (-w * w / (2.0 * v)).exp() / (2.0 * PI * v).sqrt() * h
            })
            .sum();
        let est = diagonal_sum_mc(t, &x, &field, 0, DEFAULT_ZETA, 40_000, 3).unwrap();
        assert!((est.estimate - quad).abs() <= 3.0 * est.stderr, "{est:?} vs {quad}");
    }

    #[test]
    fn constant_field_has_no_perturbation() {
        let field = constant_field(4, 1.3);
        let x = SpectralState::new(vec![0.5, 0.2, -0.3, 0.1, 0.0]);
        let est = perturbation_integral_mc(0.1, &x, &field, MIN_SAMPLES, 4).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let field = constant_field(3, 1.0);
        let x = SpectralState::new(vec![0.1, 0.2, 0.3, 0.4]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| moment_mc(0.05, &x, &field, 1, 1.0, MIN_SAMPLES, 9).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn scaling_report_gates() {
        let pts = vec![(1.0, 1.0, 0.01), (2.0, 2.0, 0.02), (4.0, 4.0, 0.04)];
        let r = ScalingReport::new(pts.clone(), SlopeTarget::Within { target: 1.0, tolerance: 0.15 }).unwrap();
        assert!(r.pass && (r.fitted_slope - 1.0).abs() < 1e-12);
        let mut noisy = pts;
        noisy[1].2 = 0.5;
        let r = ScalingReport::new(noisy, SlopeTarget::Within { target: 1.0, tolerance: 0.15 }).unwrap();
        assert!(!r.precise && !r.pass);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("param,estimate,stderr\n1.0,1.0,0.01"));
    }
}
