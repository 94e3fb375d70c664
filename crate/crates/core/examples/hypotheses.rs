//! Probe the structural hypotheses of a convolution-type operator.

use spectral_spde::basis::{BasisSpec, GridFunction, SpectralState};
use spectral_spde::operators::{holder_modulus_probe, validate_fdecay, validate_fholder, CovarianceField};
use spectral_spde::verify::convolution_field_config;

fn main() -> spectral_spde::Result<()> {
    let op = convolution_field_config().build()?;
    let spec = BasisSpec::new(32, 512)?;
    let us: Vec<GridFunction> = (0..3)
        .map(|i| GridFunction::from_fn(512, |x| 0.4 * (i as f64 + 1.0) * (3.0 * x).sin() - 0.2))
        .collect();

    let fh = validate_fholder(&op, &spec, &us, &[0.1, 0.01], 32)?;
    println!("Hölder-in-k: kappa1 {:.3}, exponent {:.2}, window slopes {:?}", fh.kappa1, fh.decay.exponent, fh.window_slopes);
    println!("super-polynomial decay: {}", fh.super_polynomial);

    let fd = validate_fdecay(&op, &spec, &us[0], op.gamma)?;
    println!("|<A(u)^2, e_k>| decay exponent {:.2} (pass {})", fd.exponent, fd.pass);

    let field = CovarianceField::new(op, spec.with_k(8))?;
    let pairs: Vec<(SpectralState, SpectralState)> = (1..=40)
        .map(|i| {
            let x = SpectralState::new((0..9).map(|n| ((i * (n + 3)) as f64).sin() / (1.0 + n as f64)).collect());
            let mut y = x.clone();
            y.coeffs[1 + i % 8] += 10f64.powf(-4.0 + 0.1 * ((7 * i) % 40) as f64);
            (x, y)
        })
        .collect();
    let probe = holder_modulus_probe(&field, &pairs)?;
    println!("‖a(x) - a(y)‖_s probe: c1 {:.3}, exponent {:?}, holds {}", probe.c1, probe.exponent, probe.holds);
    Ok(())
}
