//! Exponential-Euler simulation of the spectral system
//!
//! ```text
//! dX_n = -lambda_n X_n dt + dM_n,   <M_j, M_k>_t = int_0^t a_jk(X_s) ds,
//! ```
//!
//! freezing `a` at the left endpoint of each step and drawing the martingale
//! increment from the exact time-integrated covariance `a(X, dt)`. For
//! constant fields the scheme is exact in law for any step.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_value, BasisSpec, GridFunction, SpectralState};
use crate::error::{Error, Result};
use crate::operators::CovarianceField;
use crate::ou::{cholesky, time_integrated};
use crate::stats::{ks_critical_two_sample, ks_two_sample, stream, wasserstein1};

/// Smallest ensemble accepted by [`law_distance`].
pub const MIN_LAW_PATHS: usize = 100;

/// One simulation run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub k: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub field: CovarianceField,
    pub u0: GridFunction,
    /// Use `<M_j, M_k> = (1/2) int a_jk` instead of `int a_jk`.
    pub half_qv: bool,
    /// Step of the underlying Brownian increments. When set, `dt` must be an
    /// integer multiple of it and mode `n` of path `p` draws from the same
    /// stream for every `k` and `dt`, which couples runs at different
    /// resolutions.
    pub noise_dt: Option<f64>,
}

impl SimConfig {
    /// Validates the invariants and rebuilds the field at truncation `k`.
    pub fn new(k: usize, dt: f64, horizon: f64, seed: u64, field: &CovarianceField, u0: GridFunction) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain { what: "dt", value: dt });
        }
        if !(horizon >= 0.0) {
            return Err(Error::Domain { what: "horizon", value: horizon });
        }
        if horizon > 0.0 && horizon < dt * (1.0 - 1e-9) {
            return Err(Error::Config(format!("horizon {horizon} shorter than dt {dt}")));
        }
        let field = if field.spec().k() == k { field.clone() } else { field.with_k(k)? };
        if u0.grid_points() != field.spec().grid_points() {
            return Err(Error::Shape { expected: field.spec().grid_points() + 1, got: u0.len() });
        }
        Ok(SimConfig { k, dt, horizon, seed, field, u0, half_qv: false, noise_dt: None })
    }

    pub fn with_half_qv(mut self, on: bool) -> Self {
        self.half_qv = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise_dt(mut self, base: f64) -> Result<Self> {
        let r = self.dt / base;
        if !(base > 0.0) || (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
            return Err(Error::Config(format!("dt {} is not a multiple of the noise step {base}", self.dt)));
        }
        self.noise_dt = Some(base);
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// The field actually driving the noise (halved under the alternative
    /// convention).
    pub fn effective_field(&self) -> CovarianceField {
        if self.half_qv {
            self.field.scaled(0.5)
        } else {
            self.field.clone()
        }
    }

    pub fn initial_state(&self) -> Result<SpectralState> {
        self.field.spec().project_all(&self.u0)
    }
}

/// Sampled path `t_0 = 0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralState>,
}

impl Trajectory {
    pub fn terminal(&self) -> &SpectralState {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// CSV `t,n,coeff`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "n", "coeff"])?;
        for (t, s) in self.times.iter().zip(&self.states) {
            for (n, c) in s.coeffs.iter().enumerate() {
                wtr.serialize((t, n, c))?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// CSV `t,x,u` of the reconstructed field every `stride` steps.
    pub fn write_field_csv<W: Write>(&self, spec: &BasisSpec, stride: usize, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "x", "u"])?;
        let m = spec.grid_points() as f64;
        for (t, s) in self.times.iter().zip(&self.states).step_by(stride.max(1)) {
            for (i, u) in spec.reconstruct(s)?.values().iter().enumerate() {
                wtr.serialize((t, i as f64 / m, u))?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// `X' = e^{-lambda dt} X + xi` with `xi = L z`, `L L^T = a(X, dt)`.
///
/// A field scaled to zero gives the deterministic decay.
pub fn exp_euler_step_with(
    x: &SpectralState,
    dt: f64,
    field: &CovarianceField,
    z: &DVector<f64>,
) -> Result<SpectralState> {
    let lambdas = field.spec().lambdas();
    let mut next: Vec<f64> = x.coeffs.iter().zip(lambdas).map(|(v, l)| (-l * dt).exp() * v).collect();
    if field.noise_scale() == 0.0 {
        return Ok(SpectralState::new(next));
    }
    let base = field.covariance_matrix(x)?;
    let a = time_integrated(&base, lambdas, dt);
    let ch = cholesky(&a, "a(X, dt)").inspect_err(|_| {
        log::error!("step covariance not positive definite at state {:?}", x.coeffs);
    })?;
    let xi = ch.l() * z;
    for (v, e) in next.iter_mut().zip(xi.iter()) {
        *v += e;
    }
    Ok(SpectralState::new(next))
}

/// One step with fresh standard normals from `rng`.
pub fn exp_euler_step(x: &SpectralState, dt: f64, field: &CovarianceField, rng: &mut impl Rng) -> Result<SpectralState> {
    let z = DVector::from_fn(x.len(), |_, _| rng.sample(StandardNormal));
    exp_euler_step_with(x, dt, field, &z)
}

/// Per-mode Brownian streams of one path.
struct NoiseSource {
    streams: Vec<ChaCha8Rng>,
    per_step: usize,
}

impl NoiseSource {
    fn new(cfg: &SimConfig, path: u64) -> Self {
        let per_step = cfg.noise_dt.map_or(1, |b| (cfg.dt / b).round() as usize);
        let streams = (0..=cfg.k as u64).map(|n| stream(cfg.seed, &[path, n])).collect();
        NoiseSource { streams, per_step }
    }

    fn next(&mut self) -> DVector<f64> {
        let r = self.per_step;
        let norm = (r as f64).sqrt();
        DVector::from_iterator(
            self.streams.len(),
            self.streams.iter_mut().map(|s| (0..r).map(|_| s.sample::<f64, _>(StandardNormal)).sum::<f64>() / norm),
        )
    }
}

/// Path `path` of the ensemble defined by `cfg`.
pub fn simulate_path_indexed(cfg: &SimConfig, path: u64) -> Result<Trajectory> {
    let field = cfg.effective_field();
    let n = cfg.steps();
    let mut x = cfg.initial_state()?;
    let mut noise = NoiseSource::new(cfg, path);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(x.clone());
    for i in 1..=n {
        x = exp_euler_step_with(&x, cfg.dt, &field, &noise.next())?;
        if !x.is_finite() {
            return Err(Error::Config(format!("non-finite state at step {i}")));
        }
        times.push(i as f64 * cfg.dt);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Path 0 of `cfg`.
pub fn simulate_path(cfg: &SimConfig) -> Result<Trajectory> {
    simulate_path_indexed(cfg, 0)
}

/// `f(path)` for paths `0..n_paths`, in path order.
pub fn ensemble_map<T, F>(cfg: &SimConfig, n_paths: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Trajectory) -> Result<T> + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| simulate_path_indexed(cfg, p).and_then(|tr| f(&tr)))
        .collect()
}

/// Spectral coefficients of a test function, checked against truncation `k`.
fn check_phi(phi: &SpectralState, k: usize) -> Result<Vec<f64>> {
    if phi.coeffs.iter().skip(k + 1).any(|c| *c != 0.0) {
        return Err(Error::Truncation(k));
    }
    let mut v = phi.coeffs.clone();
    v.resize(k + 1, 0.0);
    Ok(v)
}

/// `<u, phi> = sum_n phi_n x_n`.
fn pairing(x: &SpectralState, phi: &[f64]) -> f64 {
    x.coeffs.iter().zip(phi).map(|(a, b)| a * b).sum()
}

/// Terminal values `<u_T, phi>` over an ensemble.
pub fn terminal_pairings(cfg: &SimConfig, phi: &SpectralState, n_paths: usize) -> Result<Vec<f64>> {
    let phi = check_phi(phi, cfg.k)?;
    ensemble_map(cfg, n_paths, |tr| Ok(pairing(tr.terminal(), &phi)))
}

/// `P_t u0 = sum_n e^{-lambda_n t} <u0, e_n> e_n`, cut where
/// `e^{-lambda_n t} < 1e-16` (and at the grid's Nyquist index).
pub fn heat_semigroup(u0: &GridFunction, t: f64, spec: &BasisSpec) -> Result<GridFunction> {
    if !(t > 0.0) {
        return Err(Error::Domain { what: "time", value: t });
    }
    let m = u0.grid_points();
    if m != spec.grid_points() {
        return Err(Error::Shape { expected: spec.grid_points() + 1, got: u0.len() });
    }
    let cut = (2.0 * 16.0 * std::f64::consts::LN_10 / t).sqrt() / std::f64::consts::PI;
    let n_max = (cut.floor() as usize).min(m / 2);
    let wide = BasisSpec::new(n_max, m)?;
    let coeffs = wide.project_all(u0)?;
    let decayed =
        SpectralState::new(coeffs.coeffs.iter().zip(wide.lambdas()).map(|(c, l)| (-l * t).exp() * c).collect());
    wide.reconstruct(&decayed)
}

/// `(t, P_t u0, ũ_t)` with `ũ_t = u_t - P_t u0` for every sampled time. The
/// semigroup acts on the Galerkin projection of `u0`, so `ũ_0 = 0`.
pub fn decompose_path(traj: &Trajectory, spec: &BasisSpec) -> Result<Vec<(f64, GridFunction, GridFunction)>> {
    let x0 = &traj.states[0];
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| {
            let det = SpectralState::new(
                x0.coeffs.iter().zip(spec.lambdas()).map(|(c, l)| (-l * t).exp() * c).collect(),
            );
            let det = spec.reconstruct(&det)?;
            let noise = spec.reconstruct(x)?.axpy(-1.0, &det);
            Ok((*t, det, noise))
        })
        .collect()
}

/// Martingale residual of the weak form for one test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub phi: String,
    pub residual_path: Vec<f64>,
    pub qv_measured: f64,
    pub qv_predicted: f64,
    pub mismatch_ratio: f64,
}

/// `M_t(phi) = <u_t - u_0, phi> + int_0^t sum_n lambda_n phi_n X_n ds`
/// (trapezoid), its realised quadratic variation and the predicted
/// `int phi^T a(X_s) phi ds` (left endpoints).
///
/// `field` should be the field that drove the noise (see
/// [`SimConfig::effective_field`]).
pub fn weak_form_residual(
    traj: &Trajectory,
    phi: &SpectralState,
    field: &CovarianceField,
) -> Result<ResidualReport> {
    let k = field.spec().k();
    let phi_c = check_phi(phi, k)?;
    let lambdas = field.spec().lambdas();
    let drift = |x: &SpectralState| -> f64 { x.coeffs.iter().zip(&phi_c).zip(lambdas).map(|((v, p), l)| l * p * v).sum() };
    let p0 = pairing(&traj.states[0], &phi_c);
    let mut residual_path = Vec::with_capacity(traj.states.len());
    residual_path.push(0.0);
    let mut integral = 0.0;
    let mut qv_measured = 0.0;
    let mut qv_predicted = 0.0;
    let phi_v = DVector::from_vec(phi_c.clone());
    for w in traj.states.windows(2).zip(traj.times.windows(2)) {
        let ([a, b], [ta, tb]) = (w.0, w.1) else { unreachable!() };
        let dt = tb - ta;
        integral += 0.5 * dt * (drift(a) + drift(b));
        let m = pairing(b, &phi_c) - p0 + integral;
        let dm = m - residual_path.last().unwrap();
        qv_measured += dm * dm;
        let cov = field.covariance_matrix(a)?;
        qv_predicted += dt * phi_v.dot(&(&cov * &phi_v));
        residual_path.push(m);
    }
    let mismatch_ratio = if qv_predicted > 0.0 { qv_measured / qv_predicted } else { f64::NAN };
    let name = phi
        .coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(n, c)| format!("{c}*e_{n}"))
        .collect::<Vec<_>>()
        .join("+");
    Ok(ResidualReport { phi: name, residual_path, qv_measured, qv_predicted, mismatch_ratio })
}

/// Distances between the laws of `<u_T, phi>` under two configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawDistance {
    pub ks: f64,
    pub wasserstein1: f64,
    /// Two-sample KS critical value at the 1% level.
    pub ks_critical_1pct: f64,
    pub n_paths: usize,
}

pub fn law_distance(cfg_a: &SimConfig, cfg_b: &SimConfig, phi: &SpectralState, n_paths: usize) -> Result<LawDistance> {
    if n_paths < MIN_LAW_PATHS {
        return Err(Error::InsufficientSample { got: n_paths, needed: MIN_LAW_PATHS });
    }
    let a = terminal_pairings(cfg_a, phi, n_paths)?;
    let b = terminal_pairings(cfg_b, phi, n_paths)?;
    Ok(LawDistance {
        ks: ks_two_sample(&a, &b),
        wasserstein1: wasserstein1(&a, &b),
        ks_critical_1pct: ks_critical_two_sample(0.01, n_paths, n_paths),
        n_paths,
    })
}

/// `sum_n g_nn(t) a e_n(y)^2` for the constant field `A = sqrt(a)`:
/// the variance of `ũ(t, y)`.
pub fn constant_field_noise_variance(a: f64, t: f64, spec: &BasisSpec, y: f64) -> f64 {
    spec.lambdas()
        .iter()
        .enumerate()
        .map(|(n, l)| a * crate::ou::integrated_decay(2.0 * l, t) * basis_value(n, y).powi(2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::CoefficientOperator;
    use crate::stats::{batch_means, mean, variance};

    const M: usize = 256;

    fn constant(k: usize, c: f64) -> CovarianceField {
        CovarianceField::new(CoefficientOperator::constant(c), BasisSpec::new(k, M).unwrap()).unwrap()
    }

    fn cfg(k: usize, dt: f64, horizon: f64, field: &CovarianceField) -> SimConfig {
        let u0 = GridFunction::from_fn(M, |x| (std::f64::consts::PI * x).cos() + 0.5);
        SimConfig::new(k, dt, horizon, 42, field, u0).unwrap()
    }

    #[test]
    fn zero_horizon_returns_projection() {
        let c = cfg(4, 0.01, 0.0, &constant(4, 1.0));
        let tr = simulate_path(&c).unwrap();
        assert_eq!(tr.states.len(), 1);
        assert_eq!(tr.states[0], c.initial_state().unwrap());
    }

    #[test]
    fn zero_noise_is_deterministic_decay() {
        let field = constant(5, 1.0).scaled(0.0);
        let c = cfg(5, 0.01, 0.1, &field);
        let tr = simulate_path(&c).unwrap();
        let x0 = &tr.states[0];
        for (t, x) in tr.times.iter().zip(&tr.states) {
            for (n, (v, l)) in x.coeffs.iter().zip(field.spec().lambdas()).enumerate() {
                assert!((v - (-l * t).exp() * x0.coeffs[n]).abs() <= 1e-13);
            }
        }
        for (_, _, noise) in decompose_path(&tr, field.spec()).unwrap() {
            assert!(noise.values().iter().all(|v| v.abs() <= 1e-10));
        }
        let r = weak_form_residual(&tr, &SpectralState::unit(6, 1), &field).unwrap();
        let dt = c.dt;
        let l1 = field.spec().lambdas()[1];
        let steps = tr.states.len() as f64;
        assert!(r.residual_path.iter().all(|m| m.abs() <= steps * (l1 * dt).powi(3)));
    }

    #[test]
    fn determinism() {
        let field = constant(3, 1.0);
        let c = cfg(3, 0.01, 0.2, &field);
        assert_eq!(simulate_path(&c).unwrap(), simulate_path(&c).unwrap());
        let other = c.clone().with_seed(43);
        assert_ne!(simulate_path(&c).unwrap(), simulate_path(&other).unwrap());
    }

    #[test]
    fn one_long_step_is_exact_ou() {
        let field = constant(2, 1.0);
        let c = cfg(2, 0.25, 0.25, &field);
        let x0 = c.initial_state().unwrap();
        let xs = terminal_pairings(&c, &SpectralState::unit(3, 1), 4000).unwrap();
        let l = field.spec().lambdas()[1];
        let m = (-l * 0.25).exp() * x0.coeffs[1];
        let v = crate::ou::integrated_decay(2.0 * l, 0.25);
        let ks = crate::stats::ks_one_sample(&xs, |y| crate::stats::normal_cdf((y - m) / v.sqrt()));
        assert!(ks < crate::stats::ks_critical_one_sample(0.01, xs.len()));
    }

    #[test]
    fn mean_matches_ou() {
        let field = constant(3, 1.0);
        let c = cfg(3, 0.01, 0.1, &field);
        let x0 = c.initial_state().unwrap();
        for n in 0..=3 {
            let xs = terminal_pairings(&c, &SpectralState::unit(4, n), 2000).unwrap();
            let (m, se) = batch_means(&xs);
            let want = (-field.spec().lambdas()[n] * 0.1).exp() * x0.coeffs[n];
            assert!((m - want).abs() <= 3.0 * se.max((variance(&xs) / 2000.0).sqrt()), "n={n}");
        }
    }

    #[test]
    fn half_convention_halves_variance() {
        let field = constant(1, 1.0);
        let c = cfg(1, 0.05, 0.05, &field);
        let phi = SpectralState::unit(2, 0);
        let full = variance(&terminal_pairings(&c, &phi, 4000).unwrap());
        let half = variance(&terminal_pairings(&c.clone().with_half_qv(true), &phi, 4000).unwrap());
        assert!((half / full - 0.5).abs() < 0.08, "{}", half / full);
    }

    #[test]
    fn coupled_noise_matches_across_resolutions() {
        let field = constant(2, 1.0).scaled(1.0);
        let coarse = cfg(2, 0.02, 0.02, &field).with_noise_dt(0.01).unwrap();
        let fine = cfg(4, 0.01, 0.02, &field).with_noise_dt(0.01).unwrap();
        // Mode 0 has no drift, so its terminal value is the same Brownian sum.
        let a = simulate_path(&coarse).unwrap();
        let b = simulate_path(&fine).unwrap();
        assert!((a.terminal().coeffs[0] - b.terminal().coeffs[0]).abs() < 1e-12);
        assert!(cfg(2, 0.025, 0.05, &field).with_noise_dt(0.01).is_err());
    }

    #[test]
    fn heat_semigroup_examples() {
        let spec = BasisSpec::new(8, 512).unwrap();
        let c = heat_semigroup(&GridFunction::constant(512, 2.5), 0.1, &spec).unwrap();
        assert!(c.values().iter().all(|v| (v - 2.5).abs() < 1e-10));
        let e1 = spec.basis_samples(1);
        let p = heat_semigroup(&e1, 0.05, &spec).unwrap();
        let f = (-spec.lambdas()[1] * 0.05).exp();
        assert!(p.sup_distance(&e1.map(|v| v * f)) < 1e-10);
        let u0 = GridFunction::from_fn(512, |x| (x - 0.3).abs());
        let p = heat_semigroup(&u0, 0.01, &spec).unwrap();
        assert!((spec.integrate(p.values()).unwrap() - spec.integrate(u0.values()).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn zero_initial_condition_has_zero_deterministic_part() {
        let field = constant(3, 1.0);
        let c = SimConfig::new(3, 0.01, 0.05, 1, &field, GridFunction::constant(M, 0.0)).unwrap();
        let tr = simulate_path(&c).unwrap();
        for (_, det, _) in decompose_path(&tr, field.spec()).unwrap() {
            assert!(det.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn residual_for_constant_test_function() {
        let field = constant(3, 1.2);
        let c = cfg(3, 0.01, 0.3, &field);
        let tr = simulate_path(&c).unwrap();
        let r = weak_form_residual(&tr, &SpectralState::unit(4, 0), &field).unwrap();
        for (m, x) in r.residual_path.iter().zip(&tr.states) {
            assert!((m - (x.coeffs[0] - tr.states[0].coeffs[0])).abs() < 1e-12);
        }
        assert!((r.qv_predicted - 0.3 * 1.44).abs() < 1e-12);
        let beyond = SpectralState::unit(6, 5);
        assert!(matches!(weak_form_residual(&tr, &beyond, &field), Err(Error::Truncation(3))));
    }

    #[test]
    fn law_distance_needs_paths() {
        let field = constant(2, 1.0);
        let c = cfg(2, 0.01, 0.05, &field);
        let phi = SpectralState::unit(3, 1);
        assert!(matches!(law_distance(&c, &c, &phi, 50), Err(Error::InsufficientSample { .. })));
        let d = law_distance(&c, &c, &phi, 100).unwrap();
        assert_eq!(d.ks, 0.0);
    }

    #[test]
    fn noise_variance_series() {
        let field = constant(4, 1.0);
        let c = SimConfig::new(4, 0.02, 0.04, 3, &field, GridFunction::constant(M, 0.0)).unwrap();
        let y_idx = 64;
        let vals = ensemble_map(&c, 3000, |tr| {
            let d = decompose_path(tr, field.spec())?;
            Ok(d.last().unwrap().2.values()[y_idx])
        })
        .unwrap();
        let want = constant_field_noise_variance(1.0, 0.04, field.spec(), y_idx as f64 / M as f64);
        let var = variance(&vals);
        // stderr of a Gaussian sample variance is var sqrt(2/(n-1))
        assert!((var - want).abs() <= 3.0 * want * (2.0 / 2999.0f64).sqrt(), "{var} vs {want}");
        assert!(mean(&vals).abs() < 4.0 * (want / 3000.0).sqrt());
    }
}
