use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spectral_spde::verify::{run_suite, SuiteConfig, SUITES};

/// Run a named verification suite and write `<out>/<suite>.report.json`.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// One of: linalg, jaffard, kernel_mass, moments, derivative_scaling,
    /// perturbation, simulator, uniqueness, hypotheses.
    suite: String,
    /// Suite configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the report and sweep CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo samples or simulated paths.
    #[arg(long)]
    samples: Option<usize>,
    /// Simulate with quadratic variation (1/2) int a ds.
    #[arg(long)]
    half_qv_convention: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if !SUITES.contains(&args.suite.as_str()) {
        eprintln!("error: unknown suite `{}` (expected one of {})", args.suite, SUITES.join(", "));
        return ExitCode::from(2);
    }
    let mut cfg = match SuiteConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if !cfg.suite.is_empty() && cfg.suite != args.suite {
        eprintln!("error: {} configures suite `{}`, not `{}`", args.config.display(), cfg.suite, args.suite);
        return ExitCode::from(2);
    }
    cfg.suite = args.suite;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out_dir = Some(o);
    }
    if args.samples.is_some() {
        cfg.samples = args.samples;
    }
    cfg.half_qv |= args.half_qv_convention;
    match run_suite(&cfg) {
        Ok(report) => {
            for c in &report.checks {
                println!("{:<14} {}", format!("{:?}", c.status).to_uppercase(), c.check_id);
            }
            println!(
                "{}: {} pass, {} fail, {} inconclusive",
                report.suite, report.pass, report.fail, report.inconclusive
            );
            if report.fail > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
