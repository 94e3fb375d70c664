//! Project a function on the cosine basis, rebuild it and measure how fast
//! its coefficients decay.

use spectral_spde::basis::{fourier_decay_check, BasisSpec, GridFunction, SpectralState};

fn main() -> spectral_spde::Result<()> {
    let spec = BasisSpec::new(32, 1024)?;
    let f = GridFunction::from_fn(spec.grid_points(), |x| (4.0 * ((2.0 * std::f64::consts::PI * (x - 0.5)).cos() - 1.0)).exp());
    let coeffs = spec.project_all(&f)?;
    for (n, c) in coeffs.coeffs.iter().enumerate().take(8) {
        println!("<f, e_{n}> = {c:+.6e}   lambda_{n} = {:.3}", spec.lambdas()[n]);
    }
    let back = spec.reconstruct(&coeffs)?;
    println!("sup |f - pi_K f| = {:.3e}", f.sup_distance(&back));

    let fit = fourier_decay_check(&spec, &f, 6.0, 32)?;
    println!("coefficient decay exponent {:.2} (pass at >= 5.75: {})", fit.exponent, fit.pass);

    let e3 = SpectralState::unit(spec.dim(), 3);
    println!("e_3 round trip: {:.3e}", spec.project(&spec.reconstruct(&e3)?, 3)? - 1.0);
    Ok(())
}
