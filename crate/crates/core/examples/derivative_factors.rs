//! Second x-derivatives of the kernel: the analytic S_jk form against
//! finite differences, and the cutoff-limited diagonal sum.

use spectral_spde::basis::{BasisSpec, SpectralState};
use spectral_spde::kernel::{cutoff_index, decay_state, diagonal_sum_mc, dij_kernel_analytic, dij_kernel_fd, FD_STEP};
use spectral_spde::operators::CovarianceField;
use spectral_spde::verify::modulated_field_config;

fn main() -> spectral_spde::Result<()> {
    let field = CovarianceField::new(modulated_field_config().build()?, BasisSpec::new(4, 512)?)?;
    let t = 0.1;
    let x = SpectralState::new(vec![0.2, 0.5, -0.3, 0.1, 0.0]);
    let mut y = decay_state(&x, field.spec().lambdas(), t);
    y.coeffs[1] += 0.2;
    y.coeffs[2] -= 0.05;
    for (j, k) in [(1, 1), (1, 2), (2, 3)] {
        let an = dij_kernel_analytic(t, &x, &y, &field, j, k)?;
        let fd = dij_kernel_fd(t, &x, &y, &field, j, k, FD_STEP)?;
        println!("D_{j}{k} N: analytic {an:+.6e}, finite difference {fd:+.6e}");
    }

    let field = field.with_k(16)?;
    let x = SpectralState::zeros(17);
    for t in [0.05, 0.1, 0.2] {
        let cutoff = cutoff_index(4.0, t)?;
        let m = diagonal_sum_mc(t, &x, &field, 0, 4.0, 20_000, 3)?;
        let ratio = m.estimate * t * t / cutoff as f64;
        println!("t = {t}: J = {cutoff}, diagonal sum {:.3e} ± {:.1e}, / (J t^-2) = {ratio:.4}", m.estimate, m.stderr);
    }
    Ok(())
}
