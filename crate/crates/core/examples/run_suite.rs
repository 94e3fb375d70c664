//! Run a verification suite programmatically and print its checks.

use spectral_spde::verify::{run_suite, Status, SuiteConfig};

fn main() -> spectral_spde::Result<()> {
    let out = std::env::temp_dir().join("spectral_spde_reports");
    let mut cfg = SuiteConfig::new("jaffard").with_param("gamma", 4.0);
    cfg.out_dir = Some(out.clone());
    let report = run_suite(&cfg)?;
    for c in &report.checks {
        let mark = if c.status == Status::Pass { "ok " } else { "!! " };
        println!("{mark}{:<32} {}", c.check_id, c.threshold);
    }
    println!("report: {}", report.report_path(&out).display());
    println!("artifacts: {:?}", report.artifacts);
    Ok(())
}
