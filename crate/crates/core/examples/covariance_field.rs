//! Build a state-dependent covariance field from a JSON operator
//! description and look at its Toeplitz structure.

use spectral_spde::basis::{BasisSpec, SpectralState};
use spectral_spde::operators::{CovarianceField, OperatorConfig};

const FIELD: &str = r#"{
  "kind": "inner_product", "kappa2": 0.7, "alpha": 0.9, "beta": 6.0, "gamma": 4.0,
  "f": { "kind": "modulated_holder", "base": 1.0, "amplitude": 0.3, "mode": 1, "alpha": 0.9 },
  "phis": ["e_1"]
}"#;

fn main() -> spectral_spde::Result<()> {
    let cfg: OperatorConfig = serde_json::from_str(FIELD)?;
    let field = CovarianceField::new(cfg.build()?, BasisSpec::new(8, 512)?)?;
    let mut x = SpectralState::zeros(field.dim());
    x.coeffs[1] = 0.6;

    let a = field.covariance_matrix(&x)?;
    println!("a(x), K = 8:");
    for i in 0..4 {
        let row: Vec<String> = (0..6).map(|j| format!("{:+.4}", a[(i, j)])).collect();
        println!("  {}", row.join(" "));
    }
    let (lo, hi) = spectral_spde::ou::eigen_range(&a);
    println!("spectrum in [{lo:.4}, {hi:.4}] within [{:.4}, {:.4}]", field.lambda0, field.lambda1);

    let split = field.toeplitz_split(&x)?;
    println!("Toeplitz symbol c_|i-j|: {:?}", &split.symbol()[..4]);
    println!("max |a1 + a2 - a| = {:.2e}", (split.a1() + split.a2() - &a).amax());
    println!("a2 decay constant at gamma = 4: {:.4}", split.a2_decay_constant(4.0));
    Ok(())
}
