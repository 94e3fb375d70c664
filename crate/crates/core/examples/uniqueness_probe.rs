//! Compare the laws of <u_T, e_1> across truncation levels and seeds.

use std::f64::consts::PI;

use spectral_spde::basis::{BasisSpec, GridFunction, SpectralState};
use spectral_spde::operators::CovarianceField;
use spectral_spde::sim::{law_distance, SimConfig};
use spectral_spde::verify::modulated_field_config;

fn main() -> spectral_spde::Result<()> {
    let m = 256;
    let field = CovarianceField::new(modulated_field_config().build()?, BasisSpec::new(16, m)?)?;
    let u0 = GridFunction::from_fn(m, |x| (PI * x).cos());
    let fine = SimConfig::new(16, 2e-3, 0.5, 1, &field, u0.clone())?.with_noise_dt(1e-3)?;
    let coarse = SimConfig::new(4, 1e-2, 0.5, 1, &field, u0.clone())?.with_noise_dt(1e-3)?;
    let mid = SimConfig::new(8, 5e-3, 0.5, 1, &field, u0)?.with_noise_dt(1e-3)?;
    let phi = SpectralState::unit(17, 1);
    let phi_small = |k: usize| SpectralState::unit(k + 1, 1);

    let d_mid = law_distance(&mid, &fine, &phi_small(8), 400)?;
    let d_coarse = law_distance(&coarse, &fine, &phi_small(4), 400)?;
    println!("W1(K=8, K=16) = {:.4}, W1(K=4, K=16) = {:.4}", d_mid.wasserstein1, d_coarse.wasserstein1);

    let other_seed = fine.clone().with_seed(2);
    let d = law_distance(&fine, &other_seed, &phi, 400)?;
    println!("same config, new seed: KS {:.4} vs 1% critical value {:.4}", d.ks, d.ks_critical_1pct);

    match law_distance(&fine, &other_seed, &phi, 50) {
        Err(e) => println!("50 paths: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
