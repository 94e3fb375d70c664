//! `linalg` and `jaffard` suites: randomized checks of the time-integrated
//! covariance toolkit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CheckRecord, Runner};
use crate::basis::lambda;
use crate::fit::DecayFit;
use crate::ou::{
    cholesky, constants_stable, density_ratio_constant, eigen_range, jaffard_decay_fit, ratio_bounds_check,
    schur_complement_reduce, schur_norm, spd_inverse, time_integrated_cov, toeplitz, whitening_factor,
    write_matrix_csv,
};
use crate::stats::stream;
use crate::Result;

const TAG: u64 = 0x4c41;

fn lambdas(n: usize) -> Vec<f64> {
    (0..n).map(lambda).collect()
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `G G^T / n + d I` with `d` in `[0.2, 1]`.
fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = normal_matrix(rng, n, n);
    let d = rng.random_range(0.2..1.0);
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * d
}

/// Log-uniform `t` in `[1e-3, 1]`.
fn random_t(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.random_range(-3.0..0.0))
}

/// Symmetric perturbation of Schur norm `size`.
fn perturbation(rng: &mut ChaCha8Rng, n: usize, size: f64) -> DMatrix<f64> {
    let g = normal_matrix(rng, n, n);
    let e = (&g + g.transpose()) * 0.5;
    let s = schur_norm(&e);
    e * (size / s)
}

fn worst(vals: &[f64]) -> f64 {
    vals.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub(super) fn run_linalg(r: &mut Runner<'_>) -> Result<()> {
    let n_inst = r.param_usize("instances", 100);
    let k_max = r.param_usize("k_max", 32);
    let tol = r.param("margin_tol", 1e-9);
    let seed = r.seed();
    let rng = |check: u64, i: usize| stream(seed, &[TAG, check, i as u64]);
    let mut rows: Vec<(String, usize, f64)> = Vec::new();

    // a1 = a2 + P with P >= 0.
    let mut eig_margins = Vec::new();
    let mut det_margins = Vec::new();
    for i in 0..n_inst {
        let mut g = rng(1, i);
        let n = g.random_range(1..=k_max) + 1;
        let t = random_t(&mut g);
        let b2 = random_spd(&mut g, n);
        let rank = g.random_range(1..=n);
        let h = normal_matrix(&mut g, n, rank);
        let b1 = &b2 + &h * h.transpose() * (g.random_range(0.0..0.5) / rank as f64);
        let l = lambdas(n);
        let (c1, c2) = (time_integrated_cov(&b1, &l, t)?, time_integrated_cov(&b2, &l, t)?);
        eig_margins.push(eigen_range(&(&c1.a_t - &c2.a_t)).0);
        det_margins.push(c1.logdet_a_t - c2.logdet_a_t);
        rows.push(("linalg.monotonicity".into(), i, eig_margins[i].min(det_margins[i])));
    }
    let (e, d) = (worst(&eig_margins), worst(&det_margins));
    r.push(
        CheckRecord::new("linalg.monotonicity", "min eig(a1(t) - a2(t)) >= -1e-10, log det margin >= -1e-9")
            .value("min_eigenvalue", e)
            .value("min_logdet_margin", d)
            .value("instances", n_inst as f64)
            .verdict(e >= -1e-10 && d >= -tol),
    );

    let mut excess = Vec::new();
    for i in 0..n_inst {
        let mut g = rng(2, i);
        let n = g.random_range(1..=k_max) + 1;
        let t = random_t(&mut g);
        let l = lambdas(n);
        let mut m = f64::NEG_INFINITY;
        for &li in &l {
            for &lj in &l {
                m = m.max(whitening_factor(li, lj, t) - 1.0);
            }
        }
        excess.push(m);
        rows.push(("linalg.whitening_cauchy_schwarz".into(), i, -m));
    }
    let m = excess.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    r.push(
        CheckRecord::new("linalg.whitening_cauchy_schwarz", "max factor - 1 <= 1e-12")
            .value("max_excess", m)
            .verdict(m <= 1e-12),
    );

    // Whitened perturbation, determinant ratio and spectral sandwich share
    // the same random pairs.
    let mut pert = Vec::new();
    let mut dets = Vec::new();
    let mut sandwich = Vec::new();
    for i in 0..n_inst {
        let mut g = rng(3, i);
        let n = g.random_range(1..=k_max) + 1;
        let t = random_t(&mut g);
        let a = random_spd(&mut g, n);
        let lo = eigen_range(&a).0;
        let size = g.random_range(0.01..0.9) * lo;
        let b = &a + perturbation(&mut g, n, size);
        let w = DVector::from_fn(n, |_, _| g.sample(StandardNormal));
        let l = lambdas(n);
        let rep = ratio_bounds_check(&a, &b, &l, t, &w, None)?;
        let p = rep.tilde_margin().min(rep.schur_dominance_margin()).min(rep.inverse_margin());
        pert.push(p);
        dets.push(rep.determinant_margin());
        let (l0, l1) = eigen_range(&a);
        let (e0, e1) = eigen_range(&time_integrated_cov(&a, &l, t)?.a_tilde);
        sandwich.push((e0 - l0).min(l1 - e1));
        rows.push(("linalg.whitened_perturbation".into(), i, p));
        rows.push(("linalg.determinant_ratio".into(), i, dets[i]));
        rows.push(("linalg.spectral_sandwich".into(), i, sandwich[i]));
    }
    let p = worst(&pert);
    r.push(
        CheckRecord::new("linalg.whitened_perturbation", "all margins >= -1e-9")
            .value("min_margin", p)
            .verdict(p >= -tol),
    );
    let s = worst(&sandwich);
    r.push(
        CheckRecord::new("linalg.spectral_sandwich", "eigenvalues of ã(t) within [Λ0 - 1e-9, Λ1 + 1e-9]")
            .value("min_margin", s)
            .verdict(s >= -tol),
    );
    let d = worst(&dets);
    r.push(
        CheckRecord::new("linalg.determinant_ratio", "θ e^θ - |det ratio - 1| >= -1e-9")
            .value("min_margin", d)
            .verdict(d >= -tol),
    );

    // Density ratio constant over a dimension sweep, restricted to θ, φ < 1.
    let dims = [4usize, 8, 16, 32];
    let per_dim = n_inst.div_ceil(dims.len());
    let bound = r.param("density_constant_max", 10.0);
    let mut constants = Vec::new();
    for (di, &m) in dims.iter().enumerate() {
        let mut reports = Vec::new();
        for i in 0..per_dim {
            let mut g = rng(4, di * per_dim + i);
            let t = random_t(&mut g);
            let a = random_spd(&mut g, m);
            let lo = eigen_range(&a).0;
            let size = g.random_range(0.05..0.9) * lo / m as f64;
            let b = &a + perturbation(&mut g, m, size);
            let z = DVector::from_fn(m, |_, _| g.sample::<f64, _>(StandardNormal));
            let lam0 = lo.min(eigen_range(&b).0);
            let w = &z / z.norm() * (g.random_range(0.0..0.9) * lam0 * lam0 / size).sqrt();
            reports.push(ratio_bounds_check(&a, &b, &lambdas(m), t, &w, Some(lam0))?);
        }
        constants.push(density_ratio_constant(&reports, 1.0));
    }
    let cmax = constants.iter().cloned().fold(0.0, f64::max);
    r.push(
        CheckRecord::new("linalg.density_ratio", format!("c1 finite and <= {bound} for m in {dims:?}"))
            .values("c1_by_dimension", &constants)
            .value("max_c1", cmax)
            .verdict(cmax.is_finite() && cmax <= bound),
    );

    let mut rel = Vec::new();
    for i in 0..n_inst {
        let mut g = rng(5, i);
        let n = g.random_range(1..=k_max) + 1;
        let a = random_spd(&mut g, n);
        let big = spd_inverse(&a, "schur test")?;
        let reduced = schur_complement_reduce(&big)?;
        let back = spd_inverse(&reduced, "reduced")?;
        let lead = a.view((0, 0), (n - 1, n - 1)).into_owned();
        let err = (&back - &lead).amax() / lead.amax();
        rel.push(err);
        rows.push(("linalg.schur_complement".into(), i, -err));
    }
    let e = rel.iter().cloned().fold(0.0, f64::max);
    r.push(
        CheckRecord::new("linalg.schur_complement", "max relative |B^{-1} - b| <= 1e-10")
            .value("max_relative_error", e)
            .verdict(e <= 1e-10),
    );

    let mut decay = Vec::new();
    for i in 0..n_inst {
        let mut g = rng(6, i);
        let n = g.random_range(1..=k_max) + 1;
        let t = random_t(&mut g);
        let gamma = g.random_range(2.0..5.0);
        let rho = g.random_range(0.0..0.4);
        let mut a = DMatrix::from_fn(n, n, |i, j| {
            let d = i.abs_diff(j) as f64;
            rho / (1.0 + d.powf(gamma))
        });
        for (i, j) in (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))) {
            let s = g.random_range(-1.0..1.0);
            a[(i, j)] *= s;
            a[(j, i)] *= s;
        }
        for i in 0..n {
            a[(i, i)] = g.random_range(1.0..2.0);
        }
        let kappa = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].abs() * (1.0 + (i.abs_diff(j) as f64).powf(gamma)))
            .fold(0.0, f64::max);
        let m = time_integrated_cov(&a, &lambdas(n), t)?.tilde_decay_margin(kappa, gamma);
        decay.push(m);
        rows.push(("linalg.whitened_decay".into(), i, m));
    }
    let d = worst(&decay);
    r.push(
        CheckRecord::new("linalg.whitened_decay", "κ_γ / (1 + |i-j|^γ) - |ã_ij| >= -1e-9")
            .value("min_margin", d)
            .verdict(d >= -tol),
    );

    let mut resid = Vec::new();
    for i in 0..n_inst {
        let mut g = rng(7, i);
        // One instance at the largest supported size.
        let n = if i == 0 { 129 } else { g.random_range(1..=k_max) + 1 };
        let t = random_t(&mut g);
        let a = random_spd(&mut g, n);
        let res = time_integrated_cov(&a, &lambdas(n), t)?.inversion_residual();
        resid.push(res);
        rows.push(("linalg.inversion_residual".into(), i, -res));
    }
    let m = resid.iter().cloned().fold(0.0, f64::max);
    r.push(
        CheckRecord::new("linalg.inversion_residual", "‖a(t) A(t) - I‖_s <= 1e-8")
            .value("max_residual", m)
            .verdict(m <= 1e-8),
    );

    r.csv_rows("margins.csv", &["check_id", "instance", "margin"], &rows)
}

pub(super) fn run_jaffard(r: &mut Runner<'_>) -> Result<()> {
    let ks = r.k_list(&[8, 16, 32, 64]);
    let ts = r.t_list(&[0.01, 0.1, 1.0]);
    let gamma = r.param("gamma", 4.0);
    let rho = r.param("rho", 0.4);
    let tol = r.param("margin_tol", 1e-9);
    let stability = r.param("constant_ratio", 2.0);

    let id = DMatrix::<f64>::identity(8, 8);
    let fit = jaffard_decay_fit(&id, gamma);
    r.push(
        CheckRecord::new("jaffard.identity_control", "degenerate fit that passes")
            .value("degenerate", f64::from(u8::from(fit.is_degenerate())))
            .verdict(fit.is_degenerate() && fit.pass),
    );

    let mut rows = Vec::new();
    let mut fits_json: Vec<(f64, usize, DecayFit)> = Vec::new();
    let mut min_exponent = f64::INFINITY;
    let mut all_fits_pass = true;
    let mut ratios = Vec::new();
    let mut stable = true;
    let mut diag_margin = f64::INFINITY;
    let mut largest: Option<DMatrix<f64>> = None;
    for &t in &ts {
        let mut fits = Vec::new();
        for &k in &ks {
            let first: Vec<f64> =
                (0..=k).map(|d| if d == 0 { 1.0 } else { rho / (1.0 + (d as f64).powf(gamma)) }).collect();
            let base = toeplitz(&first);
            let lam1 = eigen_range(&base).1;
            cholesky(&base, "Toeplitz base")?;
            let tc = time_integrated_cov(&base, &lambdas(k + 1), t)?;
            let f = jaffard_decay_fit(&tc.a_tilde_inv, gamma);
            diag_margin = diag_margin.min(tc.diagonal_lower_bound_margin(lam1));
            min_exponent = min_exponent.min(f.exponent);
            all_fits_pass &= f.pass;
            rows.push((t, k, f.exponent, f.constant, f.max_residual_ratio));
            fits_json.push((t, k, f.clone()));
            if k == *ks.iter().max().unwrap() && largest.is_none() {
                largest = Some(tc.a_tilde_inv.clone());
            }
            fits.push(f);
        }
        let cs: Vec<f64> = fits.iter().map(|f| f.constant).collect();
        let hi = cs.iter().cloned().fold(0.0, f64::max);
        let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
        ratios.push(hi / lo);
        stable &= constants_stable(&fits, stability);
    }
    r.push(
        CheckRecord::new("jaffard.decay_exponent", format!("fitted exponent >= {}", gamma - 0.25))
            .value("min_exponent", min_exponent)
            .value("gamma", gamma)
            .verdict(all_fits_pass),
    );
    r.push(
        CheckRecord::new("jaffard.constant_stability", format!("max/min constant across K <= {stability}"))
            .values("ratio_by_t", &ratios)
            .verdict(stable),
    );
    r.push(
        CheckRecord::new("jaffard.diagonal_lower_bound", "A_jj(t) - (2 Λ1)^{-1} (1 + λ_j t) / t >= -1e-9")
            .value("min_margin", diag_margin)
            .verdict(diag_margin >= -tol),
    );

    r.csv_rows("fits.csv", &["t", "k", "exponent", "constant", "max_residual_ratio"], &rows)?;
    r.json("fits.json", &fits_json)?;
    if let Some(m) = largest {
        r.artifact("inverse_largest_k.csv", |w| write_matrix_csv(&m, w))?;
    }
    Ok(())
}
