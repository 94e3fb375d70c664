//! Importance-sampled mass and second moments of the frozen-at-target
//! kernel N_K(t, x, y).

use spectral_spde::basis::{BasisSpec, SpectralState};
use spectral_spde::kernel::{moment_mc, total_mass_mc};
use spectral_spde::operators::CovarianceField;
use spectral_spde::verify::modulated_field_config;

fn main() -> spectral_spde::Result<()> {
    let op = modulated_field_config().build()?;
    for k in [2usize, 4, 8] {
        let field = CovarianceField::new(op.clone(), BasisSpec::new(k, 512)?)?;
        let x = SpectralState::zeros(k + 1);
        for t in [1e-3, 1e-1] {
            let m = total_mass_mc(t, &x, &field, 20_000, 7)?;
            println!("K = {k}, t = {t:<5}: mass {:.4} ± {:.4} (ESS {:.0})", m.estimate, m.stderr, m.ess);
        }
    }
    let field = CovarianceField::new(op, BasisSpec::new(8, 512)?)?;
    let x = SpectralState::zeros(9);
    for j in [1usize, 4, 8] {
        let m = moment_mc(0.05, &x, &field, j, 1.0, 20_000, 7)?;
        println!("int |w_{j}|^2 N_K dy at t = 0.05: {:.3e} ± {:.1e}", m.estimate, m.stderr);
    }
    Ok(())
}
