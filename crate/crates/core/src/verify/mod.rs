//! Named verification suites: each runs a family of checks, then writes a
//! JSON report plus CSV sweep data.

mod hypotheses;
mod kernel_checks;
mod linalg;
mod sim_checks;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, SpectralState};
use crate::operators::{CovarianceField, OperatorConfig, ProfileConfig, TestFunction};
use crate::{Error, Result};

pub const SUITES: [&str; 9] = [
    "linalg",
    "jaffard",
    "kernel_mass",
    "moments",
    "derivative_scaling",
    "perturbation",
    "simulator",
    "uniqueness",
    "hypotheses",
];

/// `(suite, check_id, anchor)` for every check the harness can emit.
pub const CATALOG: &[(&str, &str, &str)] = &[
    ("linalg", "linalg.monotonicity", "a(t) is monotone in the base matrix: a1 >= a2 implies a1(t) >= a2(t) and det a1(t) >= det a2(t)"),
    ("linalg", "linalg.whitening_cauchy_schwarz", "G_ii^{1/2} (1 - e^{-(l_i + l_j) t}) / (l_i + l_j) G_jj^{1/2} <= 1"),
    ("linalg", "linalg.whitened_perturbation", "‖ã(t) - b̃(t)‖ <= ‖ã(t) - b̃(t)‖_s <= ‖a - b‖_s and ‖Ã(t) - B̃(t)‖ <= Λ0^{-2} ‖a - b‖_s"),
    ("linalg", "linalg.spectral_sandwich", "Λ0 <= eig ã(t) <= Λ1"),
    ("linalg", "linalg.determinant_ratio", "|det b̃(t) / det ã(t) - 1| <= θ e^θ"),
    ("linalg", "linalg.density_ratio", "|Q(w, Ã) / Q(w, B̃) - 1| <= c1 (φ + θ) with c1 finite and bounded over dimensions"),
    ("linalg", "linalg.schur_complement", "B_ij = A_ij - A_{i,m+1} A_{j,m+1} / A_{m+1,m+1} satisfies b = B^{-1}"),
    ("linalg", "linalg.whitened_decay", "|ã_ij(t)| <= κ_γ / (1 + |i-j|^γ)"),
    ("linalg", "linalg.inversion_residual", "‖a(t) A(t) - I‖_s <= 1e-8"),
    ("jaffard", "jaffard.identity_control", "identity has no off-diagonal mass (degenerate fit)"),
    ("jaffard", "jaffard.decay_exponent", "|Ã_ij(t)| <= c / (1 + |i-j|^γ) with the base decay rate γ"),
    ("jaffard", "jaffard.constant_stability", "the decay constant of Ã(t) does not depend on K"),
    ("jaffard", "jaffard.diagonal_lower_bound", "A_jj(t) >= (2 Λ1)^{-1} (1 + λ_j t) / t"),
    ("kernel_mass", "kernel_mass.constant_control", "constant field: N_K is a transition density, mass 1"),
    ("kernel_mass", "kernel_mass.k_uniformity", "int N_K(t, x, y) dy is bounded uniformly in K"),
    ("kernel_mass", "kernel_mass.small_t", "int N_K(t, x, y) dy -> 1 as t -> 0"),
    ("moments", "moments.constant_closed_form", "constant field: int |w_j|^2 N_K dy = g_jj(t) a_jj"),
    ("moments", "moments.slope_low_mode", "int |w_j|^{2p} N_K dy <= c t^p / (1 + λ_j t)^p, low mode"),
    ("moments", "moments.slope_mid_mode", "int |w_j|^{2p} N_K dy <= c t^p / (1 + λ_j t)^p, middle mode"),
    ("moments", "moments.high_mode_improvement", "the (1 + λ_j t)^{-p} factor suppresses high modes"),
    ("derivative_scaling", "derivative_scaling.cutoff_examples", "J = ceil((ζ log(1/t + 1) / t)^{1/2})"),
    ("derivative_scaling", "derivative_scaling.fd_agreement", "D_jk N_K = e^{-(λ_j + λ_k) t} S_jk(w, A(y, t)) N_K"),
    ("derivative_scaling", "derivative_scaling.diagonal_sum_ratio", "int (sum_{j <= J} e^{-(λ_j + λ_{j+l}) t} S_{j,j+l})^2 N_K dy <= c J t^{-2}"),
    ("derivative_scaling", "derivative_scaling.offdiag_suppression", "off-diagonal sums (l = J) are smaller than the diagonal one"),
    ("perturbation", "perturbation.constant_control", "constant field: a(x) = a(y), perturbation integral vanishes"),
    ("perturbation", "perturbation.slope", "int |sum_ij (a_ij(x) - a_ij(y)) D_ij N_K| dy <= c t^{-1+η}"),
    ("perturbation", "perturbation.sup_norm_dependence", "perturbation integral grows at most like 1 + ‖x‖_∞^α"),
    ("simulator", "simulator.constant_mean", "E X_n(T) = e^{-λ_n T} <u0, e_n>"),
    ("simulator", "simulator.constant_variance", "Var X_n(T) = a_nn (1 - e^{-2 λ_n T}) / (2 λ_n)"),
    ("simulator", "simulator.stationary_variance", "stationary variance σ0^2 / (2 λ_n)"),
    ("simulator", "simulator.composition", "two exact steps of dt compose to one of 2 dt"),
    ("simulator", "simulator.qv_mismatch", "<M(φ)>_t = int_0^t φ^T a(X_s) φ ds"),
    ("uniqueness", "uniqueness.refinement", "laws of refined truncations approach a common limit"),
    ("uniqueness", "uniqueness.seed_ks", "same configuration, independent seeds: equal laws"),
    ("hypotheses", "hypotheses.fholder", "‖A(u + h e_k) - A(u)‖_2 <= κ1 |h|^α (k+1)^{-β}, faster than any power for convolutions"),
    ("hypotheses", "hypotheses.abnd", "κ2 <= A(u)(x) <= κ2^{-1}"),
    ("hypotheses", "hypotheses.posdef", "Λ0 |z|^2 <= <a(x) z, z> <= Λ1 |z|^2"),
    ("hypotheses", "hypotheses.fdecay", "|<A(u)^2, e_k>| <= κ3 / (1 + (k+1)^γ)"),
    ("hypotheses", "hypotheses.toeplitz_split", "a = a1 + a2 with a1 Toeplitz and a2 decaying in i + j"),
    ("hypotheses", "hypotheses.clamp_bound", "|p_R(x) - p_R(x e^{-λ t})| <= R λ t"),
    ("hypotheses", "hypotheses.holder_modulus", "‖a(x) - a(y)‖_s <= c1 |x - y|^{α/2}"),
];

fn anchor_of(check_id: &str) -> &'static str {
    CATALOG
        .iter()
        .find(|(_, id, _)| *id == check_id)
        .map(|(_, _, a)| *a)
        .unwrap_or_else(|| panic!("check `{check_id}` missing from the catalog"))
}

/// Where a suite gets its operator from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    /// JSON file with an [`OperatorConfig`], relative to the suite config.
    Path(PathBuf),
    Inline(OperatorConfig),
}

fn default_grid() -> usize {
    512
}

/// A suite run as read from JSON.
///
/// Unset lists and counts fall back to suite defaults; `params` overrides
/// named tolerances and knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub suite: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default)]
    pub half_qv: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl SuiteConfig {
    pub fn new(suite: &str) -> Self {
        SuiteConfig {
            suite: suite.to_string(),
            field: None,
            k_list: None,
            t_list: None,
            samples: None,
            seed: 0,
            out_dir: None,
            grid_points: default_grid(),
            half_qv: false,
            params: BTreeMap::new(),
            base_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: SuiteConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !SUITES.contains(&self.suite.as_str()) {
            return Err(Error::UnknownSuite(self.suite.clone()));
        }
        if self.k_list.as_ref().is_some_and(|v| v.is_empty() || v.contains(&0)) {
            return Err(Error::Config("k_list must be nonempty with K >= 1".into()));
        }
        if self.t_list.as_ref().is_some_and(|v| v.is_empty() || v.iter().any(|t| !(*t > 0.0))) {
            return Err(Error::Config("t_list must be nonempty with t > 0".into()));
        }
        if self.samples == Some(0) {
            return Err(Error::Config("samples must be positive".into()));
        }
        BasisSpec::new(1, self.grid_points)?;
        Ok(())
    }

    fn resolve_field(&self, default: OperatorConfig) -> Result<OperatorConfig> {
        match &self.field {
            None => Ok(default),
            Some(FieldSource::Inline(c)) => Ok(c.clone()),
            Some(FieldSource::Path(p)) => {
                let path = match &self.base_dir {
                    Some(d) if p.is_relative() => d.join(p),
                    _ => p.clone(),
                };
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

/// Inner-product operator `1 + 0.3 cos(pi x) clip(<u, e_1>)^0.9`.
pub fn modulated_field_config() -> OperatorConfig {
    OperatorConfig {
        kind: "inner_product".into(),
        kappa2: 0.7,
        alpha: 0.9,
        beta: 6.0,
        gamma: 4.0,
        value: None,
        f: Some(ProfileConfig::ModulatedHolder { base: 1.0, amplitude: 0.3, mode: 1, alpha: 0.9, scale: 1.0 }),
        phis: vec![TestFunction::Basis(1)],
        psi: None,
    }
}

/// Convolution operator with values in `[0.8, 1.6]`.
pub fn convolution_field_config() -> OperatorConfig {
    OperatorConfig {
        kind: "convolution".into(),
        kappa2: 0.625,
        alpha: 0.9,
        beta: 4.0,
        gamma: 4.0,
        value: None,
        f: Some(ProfileConfig::HolderBand { lower: 0.8, upper: 1.6, alpha: 0.9, scale: 1.0 }),
        phis: vec![TestFunction::Bump { center: 0.0, width: 2.0 }],
        psi: Some(TestFunction::Bump { center: 0.0, width: 0.2 }),
    }
}

pub fn constant_field_config(value: f64) -> OperatorConfig {
    OperatorConfig {
        kind: "constant".into(),
        kappa2: value.min(1.0 / value),
        alpha: 1.0,
        beta: 1.0,
        gamma: 2.0,
        value: Some(value),
        f: None,
        phis: Vec::new(),
        psi: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check_id: String,
    pub anchor: String,
    pub values: BTreeMap<String, f64>,
    pub threshold: String,
    pub status: Status,
}

impl CheckRecord {
    pub(crate) fn new(check_id: &str, threshold: impl Into<String>) -> Self {
        CheckRecord {
            check_id: check_id.to_string(),
            anchor: anchor_of(check_id).to_string(),
            values: BTreeMap::new(),
            threshold: threshold.into(),
            status: Status::Fail,
        }
    }

    pub(crate) fn value(mut self, name: &str, v: f64) -> Self {
        self.values.insert(name.to_string(), v);
        self
    }

    pub(crate) fn values(mut self, prefix: &str, vs: &[f64]) -> Self {
        for (i, v) in vs.iter().enumerate() {
            self.values.insert(format!("{prefix}_{i:02}"), *v);
        }
        self
    }

    pub(crate) fn verdict(mut self, pass: bool) -> Self {
        self.status = if pass { Status::Pass } else { Status::Fail };
        self
    }

    /// Verdict behind a Monte Carlo precision gate.
    pub(crate) fn gated(mut self, precise: bool, pass: bool) -> Self {
        self.status = match (precise, pass) {
            (false, _) => Status::Inconclusive,
            (true, true) => Status::Pass,
            (true, false) => Status::Fail,
        };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub version: String,
    pub seed: u64,
    pub timestamp: String,
    pub config: SuiteConfig,
    pub pass: usize,
    pub fail: usize,
    pub inconclusive: usize,
    pub checks: Vec<CheckRecord>,
    /// CSV and JSON files written next to the report.
    pub artifacts: Vec<String>,
}

impl SuiteReport {
    pub fn check(&self, id: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.check_id == id)
    }

    /// 0 iff no check failed.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.fail > 0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with the timestamp blanked, for reproducibility comparisons.
    pub fn to_json_without_timestamp(&self) -> Result<String> {
        let mut r = self.clone();
        r.timestamp.clear();
        r.to_json()
    }

    pub fn report_path(&self, out: &Path) -> PathBuf {
        out.join(format!("{}.report.json", self.suite))
    }
}

/// State shared by the checks of one suite run.
pub(crate) struct Runner<'a> {
    cfg: &'a SuiteConfig,
    checks: Vec<CheckRecord>,
    artifacts: Vec<String>,
}

impl<'a> Runner<'a> {
    fn param(&self, name: &str, default: f64) -> f64 {
        self.cfg.params.get(name).copied().unwrap_or(default)
    }

    fn param_usize(&self, name: &str, default: usize) -> usize {
        self.cfg.params.get(name).map_or(default, |v| v.round().max(0.0) as usize)
    }

    fn samples(&self, default: usize) -> usize {
        self.cfg.samples.unwrap_or(default)
    }

    fn k_list(&self, default: &[usize]) -> Vec<usize> {
        self.cfg.k_list.clone().unwrap_or_else(|| default.to_vec())
    }

    fn t_list(&self, default: &[f64]) -> Vec<f64> {
        self.cfg.t_list.clone().unwrap_or_else(|| default.to_vec())
    }

    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn half_qv(&self) -> bool {
        self.cfg.half_qv
    }

    fn spec(&self, k: usize) -> Result<BasisSpec> {
        BasisSpec::new(k, self.cfg.grid_points)
    }

    /// The configured field (or `default`) at truncation `k`.
    fn field(&self, default: OperatorConfig, k: usize) -> Result<CovarianceField> {
        let op = self.cfg.resolve_field(default)?.build()?;
        CovarianceField::new(op, self.spec(k)?)
    }

    fn constant_field(&self, value: f64, k: usize) -> Result<CovarianceField> {
        CovarianceField::new(constant_field_config(value).build()?, self.spec(k)?)
    }

    fn push(&mut self, rec: CheckRecord) {
        log::info!("{} {:?}", rec.check_id, rec.status);
        self.checks.push(rec);
    }

    /// Write `<suite>_<name>` into the output directory, if there is one.
    fn artifact(&mut self, name: &str, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let Some(dir) = &self.cfg.out_dir else {
            return Ok(());
        };
        let file = format!("{}_{name}", self.cfg.suite);
        let path = dir.join(&file);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        write(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(file);
        Ok(())
    }

    fn csv_rows<R: Serialize>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<()> {
        self.artifact(name, |w| {
            let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
            wtr.write_record(header)?;
            for r in rows {
                wtr.serialize(r)?;
            }
            wtr.flush().map_err(|e| Error::io("<csv>", e))?;
            Ok(())
        })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.artifact(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            Ok(())
        })
    }
}

/// Random coefficient vector `z_n s / (1 + n)` of length `dim`.
pub(crate) fn random_state(rng: &mut ChaCha8Rng, dim: usize, s: f64) -> SpectralState {
    SpectralState::new((0..dim).map(|n| rng.sample::<f64, _>(StandardNormal) * s / (1.0 + n as f64)).collect())
}

/// Run the suite named in `cfg` and write its report when `out_dir` is set.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut r = Runner { cfg, checks: Vec::new(), artifacts: Vec::new() };
    match cfg.suite.as_str() {
        "linalg" => linalg::run_linalg(&mut r)?,
        "jaffard" => linalg::run_jaffard(&mut r)?,
        "kernel_mass" => kernel_checks::run_mass(&mut r)?,
        "moments" => kernel_checks::run_moments(&mut r)?,
        "derivative_scaling" => kernel_checks::run_derivatives(&mut r)?,
        "perturbation" => kernel_checks::run_perturbation(&mut r)?,
        "simulator" => sim_checks::run_simulator(&mut r)?,
        "uniqueness" => sim_checks::run_uniqueness(&mut r)?,
        "hypotheses" => hypotheses::run(&mut r)?,
        other => return Err(Error::UnknownSuite(other.to_string())),
    }
    let count = |s: Status| r.checks.iter().filter(|c| c.status == s).count();
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default();
    let report = SuiteReport {
        suite: cfg.suite.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        timestamp,
        config: cfg.clone(),
        pass: count(Status::Pass),
        fail: count(Status::Fail),
        inconclusive: count(Status::Inconclusive),
        checks: r.checks,
        artifacts: r.artifacts,
    };
    if let Some(dir) = &cfg.out_dir {
        let path = report.report_path(dir);
        fs::write(&path, report.to_json()?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
