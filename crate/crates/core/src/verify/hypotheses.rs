//! `hypotheses` suite: the structural conditions on the coefficient operator.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{convolution_field_config, random_state, CheckRecord, Runner};
use crate::basis::{GridFunction, SpectralState};
use crate::operators::{holder_modulus_probe, truncate_state, validate_fdecay, validate_fholder};
use crate::stats::stream;
use crate::Result;

const TAG: u64 = 0x4859;

pub(super) fn run(r: &mut Runner<'_>) -> Result<()> {
    let k = r.k_list(&[32])[0];
    let seed = r.seed();
    let field = r.field(convolution_field_config(), k)?;
    let spec = field.spec().clone();
    let op = field.operator().clone();
    let m = spec.grid_points();
    let n_u = r.param_usize("u_samples", 4);
    let n_states = r.param_usize("states", 50);

    let mut g = stream(seed, &[TAG, 0]);
    let us: Vec<GridFunction> = (0..n_u)
        .map(|_| {
            let c: Vec<f64> = (0..=6).map(|n| g.sample::<f64, _>(StandardNormal) / (1.0 + n as f64).powi(2)).collect();
            GridFunction::from_fn(m, |x| {
                c.iter().enumerate().map(|(n, a)| a * (n as f64 * std::f64::consts::PI * x).cos()).sum()
            })
        })
        .collect();

    let h_values = [0.1, 0.01];
    let rep = validate_fholder(&op, &spec, &us, &h_values, k)?;
    r.push(
        CheckRecord::new("hypotheses.fholder", format!("decay exponent >= β = {} and super-polynomial", op.beta))
            .value("kappa1", rep.kappa1)
            .value("exponent", rep.decay.exponent)
            .values("window_slope", &rep.window_slopes)
            .value("super_polynomial", f64::from(u8::from(rep.super_polynomial)))
            .verdict(rep.decay.pass && rep.super_polynomial),
    );
    r.csv_rows("fholder_per_k.csv", &["k", "max_ratio"], &rep.per_k)?;

    // Bounds on A(u) over the u samples and random states.
    let states: Vec<SpectralState> = (0..n_states).map(|_| random_state(&mut g, k + 1, 2.0)).collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut violated = false;
    let mut sample = |u: &GridFunction| match op.apply(u) {
        Ok(a) => {
            for v in a.values() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        Err(e) => {
            log::warn!("{e}");
            violated = true;
        }
    };
    for u in &us {
        sample(u);
    }
    for x in &states {
        sample(&spec.reconstruct(x)?);
    }
    let kappa2 = op.kappa2;
    r.push(
        CheckRecord::new("hypotheses.abnd", format!("values within [{kappa2}, {}]", 1.0 / kappa2))
            .value("kappa2", kappa2)
            .value("min", lo)
            .value("max", hi)
            .verdict(!violated && lo >= kappa2 * (1.0 - 1e-12) && hi <= (1.0 + 1e-12) / kappa2),
    );

    let mut q_lo = f64::INFINITY;
    let mut q_hi = f64::NEG_INFINITY;
    for x in &states {
        let a = field.covariance_matrix(x)?;
        let z = nalgebra::DVector::from_fn(k + 1, |_, _| g.sample::<f64, _>(StandardNormal));
        let q = z.dot(&(&a * &z)) / z.norm_squared();
        q_lo = q_lo.min(q);
        q_hi = q_hi.max(q);
    }
    r.push(
        CheckRecord::new("hypotheses.posdef", "Rayleigh quotients within [Λ0, Λ1]")
            .value("lambda0", field.lambda0)
            .value("lambda1", field.lambda1)
            .value("min", q_lo)
            .value("max", q_hi)
            .verdict(q_lo >= field.lambda0 * (1.0 - 1e-12) && q_hi <= field.lambda1 * (1.0 + 1e-12)),
    );

    let gamma = op.gamma;
    let fits = us.iter().map(|u| validate_fdecay(&op, &spec, u, gamma)).collect::<Result<Vec<_>>>()?;
    let exps: Vec<f64> = fits.iter().map(|f| f.exponent).collect();
    r.push(
        CheckRecord::new("hypotheses.fdecay", format!("decay exponent >= γ - 0.25 = {}", gamma - 0.25))
            .values("exponent", &exps)
            .verdict(fits.iter().all(|f| f.pass)),
    );

    let mut split_err: f64 = 0.0;
    for x in states.iter().take(20) {
        let s = field.toeplitz_split(x)?;
        let a = field.covariance_matrix(x)?;
        split_err = split_err.max((s.a1() + s.a2() - a).amax());
    }
    r.push(
        CheckRecord::new("hypotheses.toeplitz_split", "max |a1 + a2 - a| <= 1e-10")
            .value("max_error", split_err)
            .verdict(split_err <= 1e-10),
    );

    // Clamp bound on a 10 x 10 x 10 grid of (x, lambda, t), R cycling.
    let mut clamp_margin = f64::INFINITY;
    let mut count = 0usize;
    for i in 0..10 {
        let x = -10.0 + 20.0 * i as f64 / 9.0;
        for j in 0..10 {
            let lam = crate::basis::lambda(j + 1);
            for l in 0..10 {
                let t = 10f64.powf(-4.0 + 0.4 * l as f64);
                let rr = 0.5 + ((i + j + l) % 5) as f64;
                let s = SpectralState::new(vec![x, x * (-lam * t).exp()]);
                let p = truncate_state(&s, rr);
                clamp_margin = clamp_margin.min(rr * lam * t - (p.coeffs[0] - p.coeffs[1]).abs());
                count += 1;
            }
        }
    }
    r.push(
        CheckRecord::new("hypotheses.clamp_bound", "R λ t - |p_R(x) - p_R(x e^{-λt})| >= 0")
            .value("min_margin", clamp_margin)
            .value("grid_points", count as f64)
            .verdict(clamp_margin >= 0.0),
    );

    let n_pairs = r.param_usize("holder_pairs", 200);
    let mut gp = stream(seed, &[TAG, 1]);
    let pairs: Vec<(SpectralState, SpectralState)> = (0..n_pairs)
        .map(|_| {
            let x = random_state(&mut gp, k + 1, 1.0);
            let d = random_state(&mut gp, k + 1, 1.0);
            let target = 10f64.powf(gp.random_range(-4.0..0.0));
            let y = SpectralState::new(x.coeffs.iter().zip(&d.coeffs).map(|(a, b)| a + b * target / d.norm()).collect());
            (x, y)
        })
        .collect();
    let probe = holder_modulus_probe(&field, &pairs)?;
    let floor = op.alpha / 2.0 - 0.1;
    let exponent = probe.exponent.unwrap_or(f64::INFINITY);
    r.push(
        CheckRecord::new("hypotheses.holder_modulus", format!("held-out excess <= 1.01 and exponent >= {floor}"))
            .value("c1", probe.c1)
            .value("heldout_excess", probe.heldout_excess)
            .value("exponent", exponent)
            .verdict(probe.holds && exponent >= floor),
    );
    Ok(())
}
