//! Time-integrated OU covariance, whitening, and the perturbation bounds
//! between two nearby base matrices.

use nalgebra::{DMatrix, DVector};
use spectral_spde::basis::lambda;
use spectral_spde::ou::{eigen_range, ratio_bounds_check, schur_complement_reduce, time_integrated_cov};

fn main() -> spectral_spde::Result<()> {
    let n = 6;
    let lambdas: Vec<f64> = (0..n).map(lambda).collect();
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.5 } else { 0.3 / (1.0 + (i.abs_diff(j) as f64).powi(4)) });
    let b = &a + DMatrix::identity(n, n) * 0.01;

    for t in [1e-3, 1e-2, 1e-1, 1.0] {
        let tc = time_integrated_cov(&a, &lambdas, t)?;
        let (lo, hi) = eigen_range(&tc.a_tilde);
        println!("t = {t:<6} eig(ã) in [{lo:.4}, {hi:.4}], residual {:.1e}", tc.inversion_residual());
    }
    println!("eig(a) in {:?}", eigen_range(&a));

    let w = DVector::from_element(n, 0.5);
    let rep = ratio_bounds_check(&a, &b, &lambdas, 0.1, &w, None)?;
    println!("θ = {:.4}, φ = {:.4}", rep.theta, rep.phi);
    println!("determinant margin {:.4}, density constant {:.4}", rep.determinant_margin(), rep.required_density_constant());

    let inv = spectral_spde::ou::spd_inverse(&a, "a")?;
    let reduced = schur_complement_reduce(&inv)?;
    let back = spectral_spde::ou::spd_inverse(&reduced, "B")?;
    println!("Schur complement: max |B^-1 - a_lead| = {:.2e}", (back - a.view((0, 0), (n - 1, n - 1))).amax());
    Ok(())
}
