//! Monte Carlo suites over the mixture kernel.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{modulated_field_config, CheckRecord, Runner};
use crate::basis::SpectralState;
use crate::fit::loglog_slope;
use crate::kernel::{
    cutoff_index, decay_state, diagonal_sum_mc, dij_kernel_analytic, dij_kernel_fd, kernel_density, moment_mc,
    perturbation_integral_mc, total_mass_mc, McEstimate, ScalingReport, SlopeTarget, DEFAULT_ZETA, FD_STEP,
};
use crate::ou::{integrated_decay, time_integrated_cov};
use crate::stats::stream;
use crate::Result;

const TAG: u64 = 0x4b45;

fn probe(p: f64, m: &McEstimate) -> (f64, f64, f64) {
    (p, m.estimate, m.stderr)
}

fn scaling_check(id: &str, threshold: String, rep: &ScalingReport) -> CheckRecord {
    let est: Vec<f64> = rep.probe_values.iter().map(|p| p.1).collect();
    let se: Vec<f64> = rep.probe_values.iter().map(|p| p.2).collect();
    let xs: Vec<f64> = rep.probe_values.iter().map(|p| p.0).collect();
    let local: Vec<f64> = xs.windows(2).zip(est.windows(2)).map(|(x, y)| loglog_slope(x, y)).collect();
    CheckRecord::new(id, threshold)
        .value("fitted_slope", rep.fitted_slope)
        .values("param", &xs)
        .values("estimate", &est)
        .values("stderr", &se)
        .values("local_slope", &local)
        .gated(rep.precise, rep.pass)
}

pub(super) fn run_mass(r: &mut Runner<'_>) -> Result<()> {
    let ks = r.k_list(&[2, 4, 8, 16]);
    let ts = r.t_list(&[0.1]);
    let n = r.samples(20_000);
    let seed = r.seed();
    let tol = r.param("k_slope_tol", 0.05);

    let control = r.constant_field(1.0, 8)?;
    let m = total_mass_mc(0.1, &SpectralState::zeros(9), &control, 10_000, seed)?;
    r.push(
        CheckRecord::new("kernel_mass.constant_control", "|mass - 1| <= 3 stderr")
            .value("estimate", m.estimate)
            .value("stderr", m.stderr)
            .verdict((m.estimate - 1.0).abs() <= 3.0 * m.stderr + 1e-12),
    );

    let mut reports = Vec::new();
    for (ti, &t) in ts.iter().enumerate() {
        let mut pts = Vec::new();
        for &k in &ks {
            let field = r.field(modulated_field_config(), k)?;
            let est = total_mass_mc(t, &SpectralState::zeros(k + 1), &field, n, seed)?;
            pts.push(probe(k as f64, &est));
        }
        let rep = ScalingReport::new(pts, SlopeTarget::Within { target: 0.0, tolerance: tol })?;
        r.artifact(&format!("k_sweep_{ti}.csv"), |w| rep.write_csv(w))?;
        reports.push(rep);
    }
    // Report the worst sweep.
    let worst = reports
        .iter()
        .max_by(|a, b| a.fitted_slope.abs().total_cmp(&b.fitted_slope.abs()))
        .expect("t_list is nonempty");
    let mut rec = scaling_check("kernel_mass.k_uniformity", format!("|log-log slope in K| <= {tol}"), worst);
    if reports.iter().any(|r| !r.precise) {
        rec = rec.gated(false, false);
    } else {
        rec = rec.verdict(reports.iter().all(|r| r.pass));
    }
    r.push(rec);

    let k = r.param_usize("small_t_k", 8);
    let t = r.param("small_t", 1e-3);
    let ns = r.param_usize("small_t_samples", 100_000);
    let max_se = r.param("small_t_max_stderr", 0.02);
    let field = r.field(modulated_field_config(), k)?;
    let m = total_mass_mc(t, &SpectralState::zeros(k + 1), &field, ns, seed)?;
    r.push(
        CheckRecord::new("kernel_mass.small_t", format!("mass in [0.9, 1.1] with stderr <= {max_se}"))
            .value("estimate", m.estimate)
            .value("stderr", m.stderr)
            .value("ess", m.ess)
            .value("t", t)
            .value("k", k as f64)
            .gated(m.stderr <= max_se, (0.9..=1.1).contains(&m.estimate)),
    );
    Ok(())
}

pub(super) fn run_moments(r: &mut Runner<'_>) -> Result<()> {
    let k = r.k_list(&[16])[0];
    let ts = r.t_list(&[1e-3, 3e-3, 1e-2, 3e-2, 1e-1]);
    let n = r.samples(20_000);
    let seed = r.seed();
    let tol = r.param("slope_tol", 0.15);
    let x = SpectralState::zeros(k + 1);

    let control = r.constant_field(1.0, 4)?;
    let (tc, jc) = (0.05, 2);
    let m = moment_mc(tc, &SpectralState::zeros(5), &control, jc, 1.0, n, seed)?;
    let want = integrated_decay(2.0 * control.spec().lambdas()[jc], tc);
    r.push(
        CheckRecord::new("moments.constant_closed_form", "|estimate - g_jj a_jj| <= 3 stderr")
            .value("estimate", m.estimate)
            .value("stderr", m.stderr)
            .value("exact", want)
            .verdict((m.estimate - want).abs() <= 3.0 * m.stderr),
    );

    let field = r.field(modulated_field_config(), k)?;
    for (id, name, default) in [("moments.slope_low_mode", "j_low", 1), ("moments.slope_mid_mode", "j_mid", 4)] {
        let j = r.param_usize(name, default);
        let mut pts = Vec::new();
        for &t in &ts {
            pts.push(probe(t, &moment_mc(t, &x, &field, j, 1.0, n, seed)?));
        }
        let rep = ScalingReport::new(pts, SlopeTarget::Within { target: 1.0, tolerance: tol })?;
        r.artifact(&format!("j{j}.csv"), |w| rep.write_csv(w))?;
        r.push(scaling_check(id, format!("log-log slope in t = 1 ± {tol}"), &rep).value("j", j as f64));
    }

    let j_high = r.param_usize("j_high", 16).min(k);
    let j_low = r.param_usize("j_low", 1);
    let t = r.param("improvement_t", 0.1);
    let hi = moment_mc(t, &x, &field, j_high, 1.0, n, seed)?;
    let lo = moment_mc(t, &x, &field, j_low, 1.0, n, seed)?;
    r.push(
        CheckRecord::new("moments.high_mode_improvement", "high-mode estimate <= low-mode estimate / 3")
            .value("high_mode", j_high as f64)
            .value("high_estimate", hi.estimate)
            .value("high_stderr", hi.stderr)
            .value("low_estimate", lo.estimate)
            .value("low_stderr", lo.stderr)
            .gated(hi.precise(0.1) && lo.precise(0.1), hi.estimate <= lo.estimate / 3.0),
    );
    Ok(())
}

pub(super) fn run_derivatives(r: &mut Runner<'_>) -> Result<()> {
    let seed = r.seed();
    let zeta = r.param("zeta", DEFAULT_ZETA);

    let ex = [cutoff_index(2.0, 0.01)?, cutoff_index(1.0, 1.0)?];
    let grid: Vec<usize> =
        (0..40).map(|i| cutoff_index(zeta, 10f64.powf(-3.0 + 0.1 * i as f64))).collect::<Result<_>>()?;
    r.push(
        CheckRecord::new("derivative_scaling.cutoff_examples", "J(2, 0.01) = 31, J(1, 1) = 1, J decreasing in t")
            .value("j_2_0p01", ex[0] as f64)
            .value("j_1_1", ex[1] as f64)
            .verdict(ex == [31, 1] && grid.windows(2).all(|w| w[1] <= w[0])),
    );

    // Relative error against the natural scale e^{-(l_j + l_k) t} N_K sqrt(A_jj A_kk)
    // so that configurations with S_jk near zero are not penalized.
    let n_cfg = r.param_usize("fd_configs", 30);
    let rel_tol = r.param("fd_rel_tol", 1e-4);
    let mut errs = Vec::new();
    let mut rows = Vec::new();
    for i in 0..n_cfg {
        let mut g = stream(seed, &[TAG, 1, i as u64]);
        let k = g.random_range(2..=6);
        let field = r.field(modulated_field_config(), k)?;
        let t = 10f64.powf(g.random_range(-1.3..-0.3));
        let x = SpectralState::new((0..=k).map(|_| 0.5 * g.sample::<f64, _>(StandardNormal)).collect());
        let l = field.spec().lambdas();
        let xp = decay_state(&x, l, t);
        let mut y = xp.clone();
        for n in 1..=k {
            y.coeffs[n] += (integrated_decay(2.0 * l[n], t)).sqrt() * g.sample::<f64, _>(StandardNormal);
        }
        let (j, kk) = (g.random_range(1..=k), g.random_range(1..=k));
        let an = dij_kernel_analytic(t, &x, &y, &field, j, kk)?;
        let fd = dij_kernel_fd(t, &x, &y, &field, j, kk, FD_STEP)?;
        let nk = kernel_density(t, &x, &y, &field)?;
        let block = field.covariance_matrix(&y)?.view((1, 1), (k, k)).into_owned();
        let tc = time_integrated_cov(&block, &l[1..], t)?;
        let prec = |m: usize| tc.a_t_inv[(m - 1, m - 1)];
        let scale = (-(l[j] + l[kk]) * t).exp() * nk * (prec(j) * prec(kk)).sqrt();
        let err = (fd - an).abs() / an.abs().max(scale);
        errs.push(err);
        rows.push((i, k, j, kk, t, an, fd, err));
    }
    let e = errs.iter().cloned().fold(0.0, f64::max);
    r.push(
        CheckRecord::new("derivative_scaling.fd_agreement", format!("max relative error <= {rel_tol}"))
            .value("max_relative_error", e)
            .value("configurations", n_cfg as f64)
            .verdict(e <= rel_tol),
    );
    r.csv_rows("fd.csv", &["config", "k", "j", "l", "t", "analytic", "finite_difference", "relative_error"], &rows)?;

    let k = r.k_list(&[16])[0];
    let ts = r.t_list(&[0.02, 0.05, 0.1, 0.2]);
    let n = r.samples(200_000);
    let field = r.field(modulated_field_config(), k)?;
    let x = SpectralState::zeros(k + 1);
    let mut pts = Vec::new();
    for &t in &ts {
        let m = diagonal_sum_mc(t, &x, &field, 0, zeta, n, seed)?;
        let norm = cutoff_index(zeta, t)? as f64 / (t * t);
        pts.push((t, m.estimate / norm, m.stderr / norm));
    }
    let bound = r.param("ratio_slope_max", 0.1);
    let rep = ScalingReport::new(pts, SlopeTarget::AtMost { bound })?;
    r.artifact("diagonal_sum_ratio.csv", |w| rep.write_csv(w))?;
    r.push(scaling_check(
        "derivative_scaling.diagonal_sum_ratio",
        format!("log-log slope of estimate / (J t^-2) <= {bound}"),
        &rep,
    ));

    let t = r.param("suppression_t", 0.1);
    let cutoff = cutoff_index(zeta, t)?;
    let ns = (n / 4).max(crate::kernel::MIN_SAMPLES);
    let d0 = diagonal_sum_mc(t, &x, &field, 0, zeta, ns, seed)?;
    let dj = diagonal_sum_mc(t, &x, &field, cutoff, zeta, ns, seed)?;
    r.push(
        CheckRecord::new("derivative_scaling.offdiag_suppression", "estimate(l = J) < estimate(l = 0)")
            .value("cutoff", cutoff as f64)
            .value("diagonal", d0.estimate)
            .value("diagonal_stderr", d0.stderr)
            .value("offdiagonal", dj.estimate)
            .value("offdiagonal_stderr", dj.stderr)
            .gated(d0.precise(0.1), dj.estimate < d0.estimate),
    );
    Ok(())
}

pub(super) fn run_perturbation(r: &mut Runner<'_>) -> Result<()> {
    let k = r.k_list(&[16])[0];
    let ts = r.t_list(&[0.02, 0.05, 0.1, 0.2]);
    let n = r.samples(100_000);
    let seed = r.seed();
    let x0 = SpectralState::zeros(k + 1);

    let control = r.constant_field(1.0, k)?;
    let zeros = ts
        .iter()
        .map(|&t| perturbation_integral_mc(t, &x0, &control, crate::kernel::MIN_SAMPLES, seed).map(|m| m.estimate))
        .collect::<Result<Vec<_>>>()?;
    r.push(
        CheckRecord::new("perturbation.constant_control", "estimate = 0 exactly")
            .values("estimate", &zeros)
            .verdict(zeros.iter().all(|v| *v == 0.0)),
    );

    let field = r.field(modulated_field_config(), k)?;
    let mut pts = Vec::new();
    for &t in &ts {
        pts.push(probe(t, &perturbation_integral_mc(t, &x0, &field, n, seed)?));
    }
    let bound = r.param("slope_min", -0.98);
    let rep = ScalingReport::new(pts, SlopeTarget::AtLeast { bound })?;
    r.artifact("t_sweep.csv", |w| rep.write_csv(w))?;
    r.push(scaling_check("perturbation.slope", format!("log-log slope in t >= {bound}"), &rep));

    let big = r.param("x_far", 4.0);
    let t = r.param("x_far_t", 0.1);
    let alpha = field.operator().alpha;
    let far = SpectralState::new((0..=k).map(|i| if i == 1 { big } else { 0.0 }).collect());
    let ns = (n / 2).max(crate::kernel::MIN_SAMPLES);
    let e0 = perturbation_integral_mc(t, &x0, &field, ns, seed)?;
    let e1 = perturbation_integral_mc(t, &far, &field, ns, seed)?;
    let limit = 1.5 * (1.0 + big.powf(alpha));
    let ratio = e1.estimate / e0.estimate;
    r.push(
        CheckRecord::new("perturbation.sup_norm_dependence", "estimate(x) / estimate(0) <= 1.5 (1 + ‖x‖_∞^α)")
            .value("sup_norm", big)
            .value("estimate_origin", e0.estimate)
            .value("stderr_origin", e0.stderr)
            .value("estimate_far", e1.estimate)
            .value("stderr_far", e1.stderr)
            .value("ratio", ratio)
            .value("limit", limit)
            .gated(e0.precise(0.1), ratio <= limit),
    );
    Ok(())
}
