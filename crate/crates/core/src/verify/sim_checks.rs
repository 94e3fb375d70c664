//! `simulator` and `uniqueness` suites.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{modulated_field_config, CheckRecord, Runner};
use crate::basis::{GridFunction, SpectralState};
use crate::ou::{integrated_decay, time_integrated};
use crate::sim::{
    ensemble_map, simulate_path, terminal_pairings, weak_form_residual, SimConfig, MIN_LAW_PATHS,
};
use crate::stats::{batch_means, ks_critical_two_sample, ks_two_sample, mean, variance, wasserstein1};
use crate::{Error, Result};

/// `|sample variance - v| / stderr` with the stderr from fourth moments.
fn variance_z(xs: &[f64], v: f64) -> f64 {
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let se = (variance(&sq) / xs.len() as f64).sqrt();
    (variance(xs) - v).abs() / se
}

fn mean_z(xs: &[f64], v: f64) -> f64 {
    (mean(xs) - v).abs() / (variance(xs) / xs.len() as f64).sqrt()
}

pub(super) fn run_simulator(r: &mut Runner<'_>) -> Result<()> {
    let m = r.cfg.grid_points;
    let n_paths = r.samples(2000);
    let seed = r.seed();
    let half = r.half_qv();
    let c = r.param("constant_value", 1.0);
    let kc = r.param_usize("constant_k", 3);

    // Constant field: mean and variance at T, exact for any dt.
    let field = r.constant_field(c, kc)?;
    let u0 = GridFunction::from_fn(m, |x| 0.5 + (PI * x).cos() + 0.3 * (2.0 * PI * x).cos());
    let horizon = r.param("constant_horizon", 0.5);
    let cfg = SimConfig::new(kc, r.param("constant_dt", 0.05), horizon, seed, &field, u0.clone())?.with_half_qv(half);
    let a = c * c * cfg.effective_field().noise_scale();
    let x0 = cfg.initial_state()?;
    let finals = ensemble_map(&cfg, n_paths, |tr| Ok(tr.terminal().coeffs.clone()))?;
    let l = field.spec().lambdas().to_vec();
    let mut mean_zs = Vec::new();
    let mut var_zs = Vec::new();
    for n in 0..=kc {
        let xs: Vec<f64> = finals.iter().map(|f| f[n]).collect();
        mean_zs.push(mean_z(&xs, (-l[n] * horizon).exp() * x0.coeffs[n]));
        var_zs.push(variance_z(&xs, a * integrated_decay(2.0 * l[n], horizon)));
    }
    let zmax = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    r.push(
        CheckRecord::new("simulator.constant_mean", "|mean - e^{-λT} x_0| <= 3 stderr per mode")
            .values("z_by_mode", &mean_zs)
            .value("paths", n_paths as f64)
            .verdict(zmax(&mean_zs) <= 3.0),
    );
    r.push(
        CheckRecord::new("simulator.constant_variance", "|variance - a g(T)| <= 3 stderr per mode")
            .values("z_by_mode", &var_zs)
            .verdict(zmax(&var_zs) <= 3.0),
    );

    let long = r.param("stationary_horizon", 2.0);
    let cfg_s = SimConfig::new(kc, r.param("stationary_dt", 0.01), long, seed ^ 1, &field, u0)?.with_half_qv(half);
    let finals = ensemble_map(&cfg_s, n_paths, |tr| Ok(tr.terminal().coeffs.clone()))?;
    let zs: Vec<f64> = (1..=kc)
        .map(|n| {
            let xs: Vec<f64> = finals.iter().map(|f| f[n]).collect();
            variance_z(&xs, a / (2.0 * l[n]))
        })
        .collect();
    r.push(
        CheckRecord::new("simulator.stationary_variance", "|variance - σ0^2 / (2 λ_n)| <= 3 stderr, n >= 1")
            .values("z_by_mode", &zs)
            .value("horizon", long)
            .verdict(zmax(&zs) <= 3.0),
    );

    // Two steps of dt against one of 2 dt: mean e^{-λ dt} e^{-λ dt} x and
    // covariance E a(dt) E + a(dt).
    let dt = r.param("composition_dt", 0.05);
    let dim = 5;
    let lam: Vec<f64> = (0..dim).map(crate::basis::lambda).collect();
    let g = DMatrix::from_fn(dim, dim, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0 - 0.4);
    let base = &g * g.transpose() + DMatrix::identity(dim, dim);
    let e = DMatrix::from_diagonal(&DVector::from_iterator(dim, lam.iter().map(|l| (-l * dt).exp())));
    let two = &e * time_integrated(&base, &lam, dt) * &e + time_integrated(&base, &lam, dt);
    let one = time_integrated(&base, &lam, 2.0 * dt);
    let cov_err = (&two - &one).amax() / one.amax();
    let x = DVector::from_iterator(dim, (0..dim).map(|i| 1.0 - 0.3 * i as f64));
    let mean_err = (&e * (&e * &x) - DMatrix::from_diagonal(&DVector::from_iterator(dim, lam.iter().map(|l| (-2.0 * l * dt).exp()))) * &x).amax();
    r.push(
        CheckRecord::new("simulator.composition", "mean and covariance mismatch <= 1e-12")
            .value("covariance_error", cov_err)
            .value("mean_error", mean_err)
            .verdict(cov_err <= 1e-12 && mean_err <= 1e-12),
    );

    // Quadratic variation of the weak-form residual.
    let k = r.k_list(&[16])[0];
    let horizon = r.t_list(&[0.5])[0];
    let dt = r.param("qv_dt", 1e-3);
    let mode = r.param_usize("phi_mode", 1);
    let field = r.field(modulated_field_config(), k)?;
    let u0 = GridFunction::from_fn(m, |x| (PI * x).cos());
    let cfg = SimConfig::new(k, dt, horizon, seed ^ 2, &field, u0)?.with_half_qv(half);
    let phi = SpectralState::unit(k + 1, mode);
    let eff = cfg.effective_field();
    let ratios = ensemble_map(&cfg, n_paths, |tr| Ok(weak_form_residual(tr, &phi, &eff)?.mismatch_ratio))?;
    let (mr, se) = batch_means(&ratios);
    r.push(
        CheckRecord::new("simulator.qv_mismatch", "mean mismatch ratio in [0.9, 1.1]")
            .value("mean_ratio", mr)
            .value("stderr", se)
            .value("paths", n_paths as f64)
            .verdict((0.9..=1.1).contains(&mr)),
    );
    let rows: Vec<(usize, f64)> = ratios.iter().copied().enumerate().collect();
    r.csv_rows("qv_ratios.csv", &["path", "mismatch_ratio"], &rows)?;
    let tr = simulate_path(&cfg)?;
    r.artifact("path0.csv", |w| tr.write_csv(w))?;
    let stride = (tr.times.len() / 50).max(1);
    r.artifact("path0_field.csv", |w| tr.write_field_csv(field.spec(), stride, w))
}

pub(super) fn run_uniqueness(r: &mut Runner<'_>) -> Result<()> {
    let n_paths = r.samples(2000);
    if n_paths < MIN_LAW_PATHS {
        return Err(Error::InsufficientSample { got: n_paths, needed: MIN_LAW_PATHS });
    }
    let m = r.cfg.grid_points;
    let seed = r.seed();
    let half = r.half_qv();
    let mut ks = r.k_list(&[8, 16, 32]);
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 3 {
        return Err(Error::Config("uniqueness needs three truncation levels".into()));
    }
    let horizon = r.t_list(&[0.5])[0];
    let dt_ref = r.param("dt_finest", 5e-4);
    let mode = r.param_usize("phi_mode", 1);
    let k_ref = *ks.last().unwrap();
    let field = r.field(modulated_field_config(), k_ref)?;
    let u0 = GridFunction::from_fn(m, |x| (PI * x).cos());
    // Shared seed and noise grid: coarser runs see sums of the finest
    // increments, which couples the ensembles path by path.
    let sample = |k: usize| -> Result<(f64, Vec<f64>)> {
        let dt = dt_ref * k_ref as f64 / k as f64;
        let cfg = SimConfig::new(k, dt, horizon, seed, &field, u0.clone())?.with_half_qv(half).with_noise_dt(dt_ref)?;
        Ok((dt, terminal_pairings(&cfg, &SpectralState::unit(k + 1, mode), n_paths)?))
    };
    let (_, reference) = sample(k_ref)?;
    let mut rows = Vec::new();
    let mut w1 = Vec::new();
    for &k in &ks[..ks.len() - 1] {
        let (dt, xs) = sample(k)?;
        let (ks_stat, w) = (ks_two_sample(&xs, &reference), wasserstein1(&xs, &reference));
        rows.push((k, dt, ks_stat, w));
        w1.push(w);
    }
    // Finest non-reference level against the coarsest.
    let (w_fine, w_coarse) = (w1[w1.len() - 1], w1[0]);
    r.push(
        CheckRecord::new("uniqueness.refinement", "W1(finer, reference) < W1(coarser, reference)")
            .values("wasserstein1", &w1)
            .values("ks", &rows.iter().map(|r| r.2).collect::<Vec<_>>())
            .verdict(w_fine < w_coarse),
    );
    r.csv_rows("refinement.csv", &["k", "dt", "ks", "wasserstein1"], &rows)?;

    let reps = r.param_usize("ks_repetitions", 100);
    let paths = r.param_usize("ks_paths", 200).max(MIN_LAW_PATHS);
    let k = r.param_usize("ks_k", 8);
    let dt = r.param("ks_dt", 1e-2);
    let field_k = field.with_k(k)?;
    let cfg = SimConfig::new(k, dt, horizon, seed, &field_k, u0)?.with_half_qv(half);
    let phi = SpectralState::unit(k + 1, mode);
    let crit = ks_critical_two_sample(0.01, paths, paths);
    let mut below = 0;
    let mut ks_rows = Vec::new();
    for rep in 0..reps as u64 {
        let a = terminal_pairings(&cfg.clone().with_seed(seed.wrapping_add(1 + 2 * rep)), &phi, paths)?;
        let b = terminal_pairings(&cfg.clone().with_seed(seed.wrapping_add(2 + 2 * rep)), &phi, paths)?;
        let d = ks_two_sample(&a, &b);
        below += usize::from(d < crit);
        ks_rows.push((rep, d, crit));
    }
    let frac = below as f64 / reps.max(1) as f64;
    r.push(
        CheckRecord::new("uniqueness.seed_ks", "fraction of KS statistics below the 1% critical value >= 0.95")
            .value("fraction_below", frac)
            .value("critical_value", crit)
            .value("repetitions", reps as f64)
            .verdict(frac >= 0.95),
    );
    r.csv_rows("seed_ks.csv", &["repetition", "ks", "critical"], &ks_rows)
}
