//! Coefficient operators `A : C[0,1] -> C[0,1]` and the spectral covariance
//! they induce,
//!
//! ```text
//! a_jk(x) = int_0^1 A(u(x))(y)^2 e_j(y) e_k(y) dy,   u(x) = sum_n x_n e_n.
//! ```
//!
//! Writing `c_m = int A^2 cos(m pi y) dy`, the product rule for cosines gives
//! `a_jk = c_{|j-k|} + c_{j+k}` for `j, k >= 1`, `a_0k = sqrt2 c_k` and
//! `a_00 = c_0`. The first term is the Toeplitz part, the second decays in
//! `j + k`. Covariance matrices are assembled from these moments; the direct
//! triple-product quadrature is kept as an independent check.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_value, BasisSpec, GridFunction, SpectralState};
use crate::error::{Error, Result};
use crate::fit::{decay_rate_fit, fit_power_law, DecayFit, ZERO_FLOOR};
use crate::ou::schur_norm;

/// Named test functions and kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TestFunction {
    /// `e_n`.
    Basis(usize),
    /// `exp(-1 / (1 - r^2))` with `r = (x - center) / width`, zero for `|r| >= 1`.
    Bump { center: f64, width: f64 },
    /// `sum_i c_i x^i`.
    Poly(Vec<f64>),
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::Basis(n) => basis_value(*n, x),
            TestFunction::Bump { center, width } => {
                let r = (x - center) / width;
                if r.abs() < 1.0 {
                    (-1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }
            TestFunction::Poly(c) => c.iter().rev().fold(0.0, |acc, ci| acc * x + ci),
        }
    }

    pub fn sample(&self, grid_points: usize) -> GridFunction {
        GridFunction::from_fn(grid_points, |x| self.eval(x))
    }

    /// Half-width of the support on the line (`None` when unbounded).
    pub fn support(&self) -> Option<f64> {
        match self {
            TestFunction::Bump { center, width } => Some(center.abs() + width),
            _ => None,
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Basis(n) => write!(f, "e_{n}"),
            TestFunction::Bump { center, width } => write!(f, "bump({center},{width})"),
            TestFunction::Poly(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "poly({})", parts.join(","))
            }
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("unrecognised test function `{s}`"));
        if let Some(n) = s.strip_prefix("e_") {
            return n.parse().map(TestFunction::Basis).map_err(|_| bad());
        }
        let args = |prefix: &str| -> Option<Vec<f64>> {
            let inner = s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            inner.split(',').map(|p| p.trim().parse().ok()).collect()
        };
        if let Some(a) = args("bump") {
            if a.len() != 2 || !(a[1] > 0.0) {
                return Err(bad());
            }
            return Ok(TestFunction::Bump { center: a[0], width: a[1] });
        }
        if let Some(a) = args("poly") {
            return Ok(TestFunction::Poly(a));
        }
        Err(bad())
    }
}

impl TryFrom<String> for TestFunction {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TestFunction> for String {
    fn from(t: TestFunction) -> String {
        t.to_string()
    }
}

/// `sign(s) min(|s|, 1)^alpha`: bounded by 1 and Hölder of order `alpha`.
#[inline]
pub fn holder_clip(s: f64, alpha: f64) -> f64 {
    s.signum() * s.abs().min(1.0).powf(alpha)
}

/// `f(x, s_1..s_n)` for the inner-product class.
pub type InnerFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `f(s_1..s_n)` for the convolution class.
pub type ConvFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `A(u)(x) = f(x, <u, phi_1>, ..., <u, phi_n>)`.
#[derive(Clone)]
pub struct InnerProductParams {
    pub f: InnerFn,
    pub phis: Vec<TestFunction>,
}

/// `A(u) = psi * f(phi_1 * ū, ..., phi_n * ū)` with even, compactly
/// supported kernels; `psi` is normalised to unit mass.
#[derive(Clone)]
pub struct ConvolutionParams {
    pub psi: TestFunction,
    pub phis: Vec<TestFunction>,
    pub f: ConvFn,
}

#[derive(Clone)]
pub enum OperatorKind {
    Constant(f64),
    InnerProduct(InnerProductParams),
    Convolution(ConvolutionParams),
}

impl fmt::Debug for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorKind::Constant(c) => write!(f, "Constant({c})"),
            OperatorKind::InnerProduct(p) => write!(f, "InnerProduct(phis = {:?})", p.phis),
            OperatorKind::Convolution(p) => write!(f, "Convolution(psi = {}, phis = {:?})", p.psi, p.phis),
        }
    }
}

/// A coefficient operator with its declared hypothesis constants.
#[derive(Debug, Clone)]
pub struct CoefficientOperator {
    pub kind: OperatorKind,
    /// `kappa2 <= A(u)(x) <= 1 / kappa2`.
    pub kappa2: f64,
    /// Hölder exponent; `(1/2, 1]` for the uniqueness theory, smaller values
    /// are accepted for exploration.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CoefficientOperator {
    pub fn new(kind: OperatorKind, kappa2: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(kappa2 > 0.0 && kappa2 <= 1.0) {
            return Err(Error::Config(format!("kappa2 must lie in (0, 1], got {kappa2}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if alpha <= 0.5 {
            log::warn!("alpha = {alpha} <= 1/2 lies outside the uniqueness regime");
        }
        if let OperatorKind::Convolution(p) = &kind {
            for k in std::iter::once(&p.psi).chain(&p.phis) {
                if !matches!(k, TestFunction::Bump { center, .. } if *center == 0.0) {
                    return Err(Error::Config(format!("convolution kernel {k} must be an even bump(0,w)")));
                }
            }
        }
        Ok(CoefficientOperator { kind, kappa2, alpha, beta, gamma })
    }

    pub fn constant(c: f64) -> Self {
        let kappa2 = c.min(1.0 / c).min(1.0);
        CoefficientOperator { kind: OperatorKind::Constant(c), kappa2, alpha: 1.0, beta: 10.0, gamma: 10.0 }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, OperatorKind::Constant(_))
    }

    /// Samples of `A(u)` on the grid of `u`, checked against the declared
    /// bounds.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        let out = self.apply_unchecked(u)?;
        self.check_bounds(&out)?;
        Ok(out)
    }

    fn apply_unchecked(&self, u: &GridFunction) -> Result<GridFunction> {
        let m = u.grid_points();
        match &self.kind {
            OperatorKind::Constant(c) => Ok(GridFunction::constant(m, *c)),
            OperatorKind::InnerProduct(p) => {
                let spec = BasisSpec::new(0, m)?;
                let s = p
                    .phis
                    .iter()
                    .map(|phi| {
                        let prod: Vec<f64> =
                            u.values().iter().zip(phi.sample(m).values()).map(|(a, b)| a * b).collect();
                        spec.integrate(&prod)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(GridFunction::from_fn(m, |x| (p.f)(x, &s)))
            }
            OperatorKind::Convolution(p) => {
                let g = conv_inner(p, u);
                let psi = kernel_samples(&p.psi, m, true);
                let vals = (0..=m as i64).map(|i| conv_at(&psi, &g, i)).collect();
                Ok(GridFunction::new(vals)?)
            }
        }
    }

    /// Value of `A(u)` at `x = index / M` for any integer index, i.e. on the
    /// whole line. Only the convolution class is defined off `[0, 1]`.
    pub fn apply_on_line(&self, u: &GridFunction, indices: &[i64]) -> Result<Vec<f64>> {
        let m = u.grid_points();
        match &self.kind {
            OperatorKind::Convolution(p) => {
                let g = conv_inner(p, u);
                let psi = kernel_samples(&p.psi, m, true);
                Ok(indices.iter().map(|&i| conv_at(&psi, &g, i)).collect())
            }
            OperatorKind::Constant(c) => Ok(vec![*c; indices.len()]),
            OperatorKind::InnerProduct(_) => {
                Err(Error::Config("inner-product operators are defined on [0, 1] only".into()))
            }
        }
    }

    fn check_bounds(&self, a: &GridFunction) -> Result<()> {
        let lo = self.kappa2 * (1.0 - 1e-12);
        let hi = (1.0 + 1e-12) / self.kappa2;
        if let Some(v) = a.values().iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(Error::Hypothesis(format!(
                "A(u) = {v} outside [{}, {}]",
                self.kappa2,
                1.0 / self.kappa2
            )));
        }
        Ok(())
    }
}

/// Kernel samples at `r / M`, `r = -S..=S`, times the grid step (or
/// normalised to unit sum).
fn kernel_samples(k: &TestFunction, m: usize, normalise: bool) -> Vec<f64> {
    let h = 1.0 / m as f64;
    let s = (k.support().unwrap_or(1.0) * m as f64).ceil() as i64;
    let mut v: Vec<f64> = (-s..=s).map(|r| k.eval(r as f64 * h) * h).collect();
    if normalise {
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
    }
    v
}

/// Index of the even 2-periodic extension on the grid: node `i` of the
/// line maps to node `reflect(i)` of `[0, 1]`.
#[inline]
fn reflect(i: i64, m: i64) -> usize {
    let p = i.rem_euclid(2 * m);
    (if p > m { 2 * m - p } else { p }) as usize
}

/// `sum_r k_r g̅(i - r)` with `k` centred.
fn conv_at(k: &[f64], g: &[f64], i: i64) -> f64 {
    let m = (g.len() - 1) as i64;
    let s = (k.len() / 2) as i64;
    k.iter().enumerate().map(|(idx, w)| w * g[reflect(i - (idx as i64 - s), m)]).sum()
}

/// `f(phi_1 * ū, ..., phi_n * ū)` on the grid.
fn conv_inner(p: &ConvolutionParams, u: &GridFunction) -> Vec<f64> {
    let m = u.grid_points();
    let kernels: Vec<Vec<f64>> = p.phis.iter().map(|k| kernel_samples(k, m, false)).collect();
    let mut s = vec![0.0; kernels.len()];
    (0..=m as i64)
        .map(|i| {
            for (sj, k) in s.iter_mut().zip(&kernels) {
                *sj = conv_at(k, u.values(), i);
            }
            (p.f)(&s)
        })
        .collect()
}

/// Built-in `f` profiles loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileConfig {
    /// `base + amplitude cos(mode pi x) mean_i holder_clip(s_i / scale, alpha)`.
    ModulatedHolder { base: f64, amplitude: f64, mode: usize, alpha: f64, #[serde(default = "one")] scale: f64 },
    /// `(lower + upper)/2 + (upper - lower)/2 mean_i holder_clip(s_i / scale, alpha)`.
    HolderBand { lower: f64, upper: f64, alpha: f64, #[serde(default = "one")] scale: f64 },
    /// `sqrt(1 + sum_k coeffs[k-1] e_k(x))`, independent of `u`.
    SquareRootSeries { coeffs: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

fn mean_clip(s: &[f64], scale: f64, alpha: f64) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    s.iter().map(|v| holder_clip(v / scale, alpha)).sum::<f64>() / s.len() as f64
}

impl ProfileConfig {
    pub fn inner_fn(&self) -> InnerFn {
        match self.clone() {
            ProfileConfig::ModulatedHolder { base, amplitude, mode, alpha, scale } => Arc::new(move |x, s| {
                base + amplitude * (mode as f64 * PI * x).cos() * mean_clip(s, scale, alpha)
            }),
            ProfileConfig::HolderBand { lower, upper, alpha, scale } => Arc::new(move |_, s| {
                0.5 * (lower + upper) + 0.5 * (upper - lower) * mean_clip(s, scale, alpha)
            }),
            ProfileConfig::SquareRootSeries { coeffs } => Arc::new(move |x, _| {
                let v: f64 = 1.0 + coeffs.iter().enumerate().map(|(k, c)| c * basis_value(k + 1, x)).sum::<f64>();
                v.sqrt()
            }),
        }
    }

    pub fn conv_fn(&self) -> Result<ConvFn> {
        match self.clone() {
            ProfileConfig::HolderBand { lower, upper, alpha, scale } => Ok(Arc::new(move |s| {
                0.5 * (lower + upper) + 0.5 * (upper - lower) * mean_clip(s, scale, alpha)
            })),
            other => Err(Error::Config(format!("profile {other:?} needs a spatial argument"))),
        }
    }
}

/// JSON description of an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub kind: String,
    pub kappa2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<ProfileConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phis: Vec<TestFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<TestFunction>,
}

impl OperatorConfig {
    pub fn build(&self) -> Result<CoefficientOperator> {
        let need_f = || self.f.clone().ok_or_else(|| Error::Config("missing `f`".into()));
        let kind = match self.kind.as_str() {
            "constant" => {
                OperatorKind::Constant(self.value.ok_or_else(|| Error::Config("missing `value`".into()))?)
            }
            "inner_product" => {
                if self.phis.is_empty() {
                    return Err(Error::Config("inner_product needs at least one phi".into()));
                }
                OperatorKind::InnerProduct(InnerProductParams { f: need_f()?.inner_fn(), phis: self.phis.clone() })
            }
            "convolution" => OperatorKind::Convolution(ConvolutionParams {
                psi: self.psi.clone().ok_or_else(|| Error::Config("missing `psi`".into()))?,
                phis: self.phis.clone(),
                f: need_f()?.conv_fn()?,
            }),
            other => return Err(Error::Config(format!("unknown operator kind `{other}`"))),
        };
        CoefficientOperator::new(kind, self.kappa2, self.alpha, self.beta, self.gamma)
    }
}

/// Precomputed cosine-moment quadrature for one `(K, M)`.
#[derive(Debug, Clone)]
struct MomentTable {
    /// `w_i cos(m pi y_i)` for `m = 0..=2K`, row-major.
    rows: Vec<Vec<f64>>,
}

impl MomentTable {
    fn new(spec: &BasisSpec) -> Self {
        let m = spec.grid_points() as f64;
        let rows = (0..=2 * spec.k())
            .map(|order| {
                spec.weights()
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * (order as f64 * PI * i as f64 / m).cos())
                    .collect()
            })
            .collect();
        MomentTable { rows }
    }

    fn moments(&self, sq: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| crate::basis::dot(r, sq)).collect()
    }
}

/// Index-0 factor of the cosine split.
#[inline]
fn edge(i: usize) -> f64 {
    if i == 0 {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        1.0
    }
}

/// State-dependent covariance `x -> a(x)` built from an operator.
#[derive(Debug, Clone)]
pub struct CovarianceField {
    operator: Arc<CoefficientOperator>,
    spec: BasisSpec,
    table: Arc<MomentTable>,
    /// `<phi_i, e_n>` for inner-product operators.
    phi_coeffs: Vec<Vec<f64>>,
    truncation: Option<f64>,
    scale: f64,
    pub lambda0: f64,
    pub lambda1: f64,
}

impl CovarianceField {
    pub fn new(operator: CoefficientOperator, spec: BasisSpec) -> Result<Self> {
        let phi_coeffs = match &operator.kind {
            OperatorKind::InnerProduct(p) => p
                .phis
                .iter()
                .map(|phi| spec.project_all(&phi.sample(spec.grid_points())).map(|s| s.coeffs))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        let k2 = operator.kappa2 * operator.kappa2;
        Ok(CovarianceField {
            table: Arc::new(MomentTable::new(&spec)),
            operator: Arc::new(operator),
            spec,
            phi_coeffs,
            truncation: None,
            scale: 1.0,
            lambda0: k2,
            lambda1: 1.0 / k2,
        })
    }

    /// `a^R(x) = a(p_R(x))` with componentwise clamping.
    pub fn truncated(&self, r: f64) -> Self {
        CovarianceField { truncation: Some(r), ..self.clone() }
    }

    /// `s * a(x)`; `s = 0` gives the zero-noise diagnostic and `s = 1/2` the
    /// halved quadratic-variation convention. Spectral bounds scale along.
    pub fn scaled(&self, s: f64) -> Self {
        CovarianceField { scale: self.scale * s, lambda0: self.lambda0 * s, lambda1: self.lambda1 * s, ..self.clone() }
    }

    /// Same operator on a different truncation level.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        let mut f = CovarianceField::new((*self.operator).clone(), self.spec.with_k(k))?;
        f.truncation = self.truncation;
        f.scale = self.scale;
        f.lambda0 = self.lambda0;
        f.lambda1 = self.lambda1;
        Ok(f)
    }

    pub fn operator(&self) -> &CoefficientOperator {
        &self.operator
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn noise_scale(&self) -> f64 {
        self.scale
    }

    /// `a(x)` does not depend on `x`.
    pub fn is_state_independent(&self) -> bool {
        self.operator.is_constant()
    }

    fn effective_state(&self, x: &SpectralState) -> Result<SpectralState> {
        if x.len() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), got: x.len() });
        }
        Ok(match self.truncation {
            Some(r) => truncate_state(x, r),
            None => x.clone(),
        })
    }

    /// Samples of `A(u(x))` on the field's grid.
    pub fn coefficient(&self, x: &SpectralState) -> Result<GridFunction> {
        let x = self.effective_state(x)?;
        match &self.operator.kind {
            OperatorKind::Constant(c) => Ok(GridFunction::constant(self.spec.grid_points(), *c)),
            OperatorKind::InnerProduct(p) => {
                let s: Vec<f64> = self
                    .phi_coeffs
                    .iter()
                    .map(|pc| pc.iter().zip(&x.coeffs).map(|(a, b)| a * b).sum())
                    .collect();
                let a = GridFunction::from_fn(self.spec.grid_points(), |y| (p.f)(y, &s));
                self.operator.check_bounds(&a)?;
                Ok(a)
            }
            OperatorKind::Convolution(_) => self.operator.apply(&self.spec.reconstruct(&x)?),
        }
    }

    /// Cosine moments `c_m = int A(u(x))^2 cos(m pi y) dy`, `m = 0..=2K`,
    /// including the noise scale.
    pub fn cosine_moments(&self, x: &SpectralState) -> Result<Vec<f64>> {
        if let OperatorKind::Constant(c) = self.operator.kind {
            self.effective_state(x)?;
            let mut v = vec![0.0; 2 * self.spec.k() + 1];
            v[0] = c * c * self.scale;
            return Ok(v);
        }
        let a = self.coefficient(x)?;
        let sq: Vec<f64> = a.values().iter().map(|v| v * v * self.scale).collect();
        Ok(self.table.moments(&sq))
    }

    /// `a(x)` assembled from the cosine moments.
    pub fn covariance_matrix(&self, x: &SpectralState) -> Result<DMatrix<f64>> {
        let c = self.cosine_moments(x)?;
        Ok(assemble(&c, self.dim()))
    }

    /// `a(x)` by direct quadrature of `A^2 e_j e_k`, symmetrised.
    ///
    /// Logs a warning if the raw quadrature is asymmetric beyond `1e-10`.
    pub fn covariance_matrix_direct(&self, x: &SpectralState) -> Result<DMatrix<f64>> {
        let a = self.coefficient(x)?;
        let n = self.dim();
        let sq: Vec<f64> = a.values().iter().map(|v| v * v * self.scale).collect();
        let basis: Vec<GridFunction> = (0..n).map(|j| self.spec.basis_samples(j)).collect();
        let w = self.spec.weights();
        let raw = DMatrix::from_fn(n, n, |j, k| {
            sq.iter()
                .zip(basis[j].values())
                .zip(basis[k].values())
                .zip(w)
                .map(|(((s, ej), ek), wi)| s * ej * ek * wi)
                .sum::<f64>()
        });
        let asym = (&raw - raw.transpose()).abs().max();
        if asym > 1e-10 {
            log::warn!("covariance quadrature asymmetric by {asym:e} before symmetrisation");
        }
        Ok(crate::ou::symmetrize(&raw))
    }

    pub fn toeplitz_split(&self, x: &SpectralState) -> Result<ToeplitzSplit> {
        let split = ToeplitzSplit { moments: self.cosine_moments(x)?, dim: self.dim() };
        let direct = self.covariance_matrix_direct(x)?;
        let err = (split.a1() + split.a2() - direct).abs().max();
        if err > 1e-8 {
            return Err(Error::SplitConsistency(err));
        }
        Ok(split)
    }
}

pub(crate) fn assemble(c: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |j, k| {
        if j == 0 && k == 0 {
            c[0]
        } else if j == 0 || k == 0 {
            SQRT_2 * c[j + k]
        } else {
            c[j.abs_diff(k)] + c[j + k]
        }
    })
}

/// `a = a1 + a2` with `a1` Toeplitz (up to the index-0 factors) and `a2`
/// depending on `i + j` only.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzSplit {
    /// Cosine moments `c_0..c_{2K}`.
    moments: Vec<f64>,
    dim: usize,
}

impl ToeplitzSplit {
    /// Toeplitz symbol `c_0..c_K`: `a1_ij = c_{|i-j|}` for `i, j >= 1`.
    pub fn symbol(&self) -> &[f64] {
        &self.moments[..self.dim]
    }

    /// `a2_ij = c_{i+j}` for `i, j >= 1`.
    pub fn sum_sequence(&self) -> &[f64] {
        &self.moments
    }

    /// Entries with index 0 carry a factor `1/sqrt2` per occurrence.
    pub fn a1(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| edge(i) * edge(j) * self.moments[i.abs_diff(j)])
    }

    pub fn a2(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| edge(i) * edge(j) * self.moments[i + j])
    }

    /// Smallest `kappa'` with `|a2_ij| <= kappa' / (1 + (i+j)^gamma)`.
    pub fn a2_decay_constant(&self, gamma: f64) -> f64 {
        let a2 = self.a2();
        let mut c: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                c = c.max(a2[(i, j)].abs() * (1.0 + ((i + j) as f64).powf(gamma)));
            }
        }
        c
    }
}

/// Componentwise clamp `p_R(x) = (x ∧ R) ∨ (-R)`.
pub fn truncate_state(x: &SpectralState, r: f64) -> SpectralState {
    SpectralState::new(x.coeffs.iter().map(|v| v.clamp(-r, r)).collect())
}

/// Report of the `‖A(u + h e_k) - A(u)‖_2 <= kappa1 |h|^alpha (k+1)^-beta` probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FholderReport {
    /// Smallest `kappa1` that makes every sampled instance hold.
    pub kappa1: f64,
    /// `(k, max over u, h of ‖A(u + h e_k) - A(u)‖_2 / |h|^alpha)`.
    pub per_k: Vec<(usize, f64)>,
    /// Decay of `per_k` against `k + 1`, passing at the declared `beta`.
    pub decay: DecayFit,
    /// Log-log slopes over consecutive windows of `k`.
    pub window_slopes: Vec<f64>,
    /// Decay steepens window over window (or reaches the zero floor) and the
    /// last window decays faster than `beta`.
    pub super_polynomial: bool,
}

/// Probe the Hölder hypothesis over samples of `u`, steps `h` and `k <= k_max`.
pub fn validate_fholder(
    op: &CoefficientOperator,
    spec: &BasisSpec,
    u_samples: &[GridFunction],
    h_values: &[f64],
    k_max: usize,
) -> Result<FholderReport> {
    if u_samples.is_empty() || h_values.is_empty() {
        return Err(Error::InsufficientSample { got: 0, needed: 1 });
    }
    let mut kappa1: f64 = 0.0;
    let mut per_k = Vec::with_capacity(k_max + 1);
    let base: Vec<GridFunction> = u_samples.iter().map(|u| op.apply(u)).collect::<Result<_>>()?;
    for k in 0..=k_max {
        let ek = spec.basis_samples(k);
        let mut worst: f64 = 0.0;
        for (u, au) in u_samples.iter().zip(&base) {
            for &h in h_values {
                let moved = op.apply(&u.axpy(h, &ek))?;
                let diff: Vec<f64> = moved.values().iter().zip(au.values()).map(|(a, b)| (a - b).powi(2)).collect();
                let dist = spec.integrate(&diff)?.max(0.0).sqrt();
                let hpow = h.abs().powf(op.alpha);
                worst = worst.max(dist / hpow);
                kappa1 = kappa1.max(dist / (hpow * ((k + 1) as f64).powf(-op.beta)));
            }
        }
        per_k.push((k, worst));
    }
    let ks: Vec<f64> = per_k.iter().map(|(k, _)| (*k + 1) as f64).collect();
    let vals: Vec<f64> = per_k.iter().map(|(_, v)| *v).collect();
    let peak = vals.iter().cloned().fold(0.0, f64::max);
    // Values below the relative floor carry only rounding noise.
    let floor = (peak * 1e-12).max(ZERO_FLOOR);
    let kept: Vec<(f64, f64)> =
        ks.iter().zip(&vals).filter(|(k, v)| **v > floor && **k >= 2.0).map(|(k, v)| (*k, *v)).collect();
    let decay = if kept.len() < 2 {
        DecayFit::degenerate()
    } else {
        let (kk, vv): (Vec<f64>, Vec<f64>) = kept.iter().cloned().unzip();
        decay_rate_fit(&kk, &vv, op.beta)
    };
    let window_slopes = window_slopes(&kept, 3);
    let reaches_floor = kept.len() < vals.len().saturating_sub(1);
    let steepening = window_slopes.windows(2).all(|w| w[1] < w[0]);
    let last_fast = window_slopes.last().is_none_or(|s| -s >= op.beta);
    let super_polynomial = window_slopes.len() >= 2 && steepening && last_fast
        || reaches_floor && decay.exponent >= op.beta;
    Ok(FholderReport { kappa1, per_k, decay, window_slopes, super_polynomial })
}

/// Log-log slopes over `windows` consecutive, equally sized chunks.
fn window_slopes(points: &[(f64, f64)], windows: usize) -> Vec<f64> {
    if points.len() < 2 * windows {
        return Vec::new();
    }
    let size = points.len() / windows;
    (0..windows)
        .map(|w| {
            let chunk = &points[w * size..if w + 1 == windows { points.len() } else { (w + 1) * size }];
            let xs: Vec<f64> = chunk.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = chunk.iter().map(|p| p.1).collect();
            crate::fit::loglog_slope(&xs, &ys)
        })
        .collect()
}

/// Decay of `|<A(u)^2, e_k>|` against `k + 1` for `k = 1..=K`, passing when
/// the exponent is at least `gamma - 0.25`.
pub fn validate_fdecay(op: &CoefficientOperator, spec: &BasisSpec, u: &GridFunction, gamma: f64) -> Result<DecayFit> {
    if !(gamma > 1.0) {
        return Err(Error::Domain { what: "gamma", value: gamma });
    }
    let a = op.apply(u)?;
    let sq = a.map(|v| v * v);
    let ks: Vec<f64> = (1..=spec.k()).map(|k| (k + 1) as f64).collect();
    let coeffs = (1..=spec.k()).map(|k| spec.project(&sq, k)).collect::<Result<Vec<_>>>()?;
    Ok(decay_rate_fit(&ks, &coeffs, gamma - 0.25))
}

/// `d_{alpha,beta}(x, y) = sum_{n=1}^K |x_n - y_n|^alpha n^-beta`.
pub fn d_alpha_beta(x: &SpectralState, y: &SpectralState, alpha: f64, beta: f64) -> f64 {
    x.coeffs
        .iter()
        .zip(&y.coeffs)
        .enumerate()
        .skip(1)
        .map(|(n, (a, b))| (a - b).abs().powf(alpha) * (n as f64).powf(-beta))
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderPairRow {
    pub schur_distance: f64,
    pub l2_distance: f64,
    pub holder_scale: f64,
    pub d_alpha_beta: f64,
}

/// Report of the `‖a(x) - a(y)‖_s <= c1 ‖x - y‖^{alpha/2}` probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderProbeReport {
    pub rows: Vec<HolderPairRow>,
    /// Fitted on the first half of the pairs.
    pub c1: f64,
    /// Largest ratio on the held-out half divided by `c1`.
    pub heldout_excess: f64,
    pub holds: bool,
    /// Signed log-log slope of Schur distance against `‖x - y‖` (`None` when
    /// fewer than three pairs have positive distances).
    pub exponent: Option<f64>,
}

pub fn holder_modulus_probe(
    field: &CovarianceField,
    pairs: &[(SpectralState, SpectralState)],
) -> Result<HolderProbeReport> {
    if pairs.is_empty() {
        return Err(Error::InsufficientSample { got: 0, needed: 1 });
    }
    let op = field.operator();
    let rows = pairs
        .iter()
        .map(|(x, y)| {
            let ax = field.covariance_matrix(x)?;
            let ay = field.covariance_matrix(y)?;
            let l2 = x.coeffs.iter().zip(&y.coeffs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            Ok(HolderPairRow {
                schur_distance: schur_norm(&(ax - ay)),
                l2_distance: l2,
                holder_scale: l2.powf(op.alpha / 2.0),
                d_alpha_beta: d_alpha_beta(x, y, op.alpha, op.beta),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ratio = |r: &HolderPairRow| if r.holder_scale > 0.0 { r.schur_distance / r.holder_scale } else { 0.0 };
    let split = rows.len().div_ceil(2);
    let c1 = rows[..split].iter().map(ratio).fold(0.0, f64::max);
    let held = rows[split..].iter().map(ratio).fold(0.0, f64::max);
    let heldout_excess = if c1 > 0.0 { held / c1 } else if held > 0.0 { f64::INFINITY } else { 0.0 };
    let positive: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.schur_distance > ZERO_FLOOR && r.l2_distance > 0.0)
        .map(|r| (r.l2_distance, r.schur_distance))
        .collect();
    let exponent = fit_power_law(&positive).ok().map(|f| f.exponent);
    Ok(HolderProbeReport { rows, c1, heldout_excess, holds: heldout_excess <= 1.01, exponent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const M: usize = 1024;

    fn sine_tanh() -> CoefficientOperator {
        let f: InnerFn = Arc::new(|x, s| 2.0 + (PI * x).sin() * s[0].tanh());
        let kind = OperatorKind::InnerProduct(InnerProductParams { f, phis: vec![TestFunction::Poly(vec![1.0])] });
        CoefficientOperator::new(kind, 1.0 / 3.0, 1.0, 5.0, 2.0).unwrap()
    }

    fn modulated(phi: TestFunction) -> CoefficientOperator {
        OperatorConfig {
            kind: "inner_product".into(),
            kappa2: 0.7,
            alpha: 0.9,
            beta: 6.0,
            gamma: 4.0,
            value: None,
            f: Some(ProfileConfig::ModulatedHolder { base: 1.0, amplitude: 0.25, mode: 2, alpha: 0.9, scale: 1.0 }),
            phis: vec![phi],
            psi: None,
        }
        .build()
        .unwrap()
    }

    fn convolution() -> CoefficientOperator {
        OperatorConfig {
            kind: "convolution".into(),
            kappa2: 0.5,
            alpha: 0.9,
            beta: 6.0,
            gamma: 4.0,
            value: None,
            f: Some(ProfileConfig::HolderBand { lower: 0.8, upper: 1.6, alpha: 0.9, scale: 1.0 }),
            phis: vec!["bump(0,0.3)".parse().unwrap()],
            psi: Some("bump(0,0.2)".parse().unwrap()),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn test_function_parsing() {
        assert_eq!("e_3".parse::<TestFunction>().unwrap(), TestFunction::Basis(3));
        assert_eq!("bump(0.5, 0.2)".parse::<TestFunction>().unwrap(), TestFunction::Bump { center: 0.5, width: 0.2 });
        assert_eq!("poly(1,0,2)".parse::<TestFunction>().unwrap(), TestFunction::Poly(vec![1.0, 0.0, 2.0]));
        assert!("wiggle(1)".parse::<TestFunction>().is_err());
        assert!("bump(0,-1)".parse::<TestFunction>().is_err());
        let p = TestFunction::Poly(vec![1.0, 0.0, 2.0]);
        assert_eq!(p.eval(2.0), 9.0);
    }

    #[test]
    fn constant_operator() {
        let op = CoefficientOperator::constant(1.0);
        let u = GridFunction::from_fn(M, |x| x.sin());
        assert!(op.apply(&u).unwrap().values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn inner_product_zero_state() {
        let op = sine_tanh();
        let a = op.apply(&GridFunction::constant(M, 0.0)).unwrap();
        assert!(a.values().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn convolution_of_constant_profile() {
        let f: ConvFn = Arc::new(|_| 1.3);
        let kind = OperatorKind::Convolution(ConvolutionParams {
            psi: "bump(0,0.15)".parse().unwrap(),
            phis: vec!["bump(0,0.1)".parse().unwrap()],
            f,
        });
        let op = CoefficientOperator::new(kind, 0.7, 1.0, 4.0, 4.0).unwrap();
        // Oracle: the direct integral of the normalised bump is 1.
        let a = op.apply(&GridFunction::from_fn(M, |x| 3.0 * x)).unwrap();
        assert!(a.values().iter().all(|v| (v - 1.3).abs() < 1e-12));
    }

    #[test]
    fn bounds_violation_is_reported() {
        let f: InnerFn = Arc::new(|_, s| 1.0 + s[0]);
        let kind = OperatorKind::InnerProduct(InnerProductParams { f, phis: vec![TestFunction::Basis(0)] });
        let op = CoefficientOperator::new(kind, 0.5, 1.0, 5.0, 2.0).unwrap();
        assert!(op.apply(&GridFunction::constant(M, 0.5)).is_ok());
        assert!(matches!(op.apply(&GridFunction::constant(M, 5.0)), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn covariance_of_constant_operator() {
        let spec = BasisSpec::new(6, M).unwrap();
        let x = SpectralState::new(vec![0.3; 7]);
        let id = CovarianceField::new(CoefficientOperator::constant(1.0), spec.clone()).unwrap();
        let a = id.covariance_matrix(&x).unwrap();
        assert!((a - DMatrix::identity(7, 7)).abs().max() < 1e-15);
        let c = CovarianceField::new(CoefficientOperator::constant(1.5), spec).unwrap();
        let direct = c.covariance_matrix_direct(&x).unwrap();
        assert!((direct - DMatrix::identity(7, 7) * 2.25).abs().max() < 1e-10);
    }

    #[test]
    fn covariance_with_single_cosine_mode() {
        // A^2 = 1 + cos(2 pi y)/2 through the square-root profile (<e_2, A^2> = sqrt2/4).
        let cfg = OperatorConfig {
            kind: "inner_product".into(),
            kappa2: 0.7,
            alpha: 1.0,
            beta: 6.0,
            gamma: 4.0,
            value: None,
            f: Some(ProfileConfig::SquareRootSeries { coeffs: vec![0.0, SQRT_2 / 4.0] }),
            phis: vec![TestFunction::Basis(1)],
            psi: None,
        };
        let spec = BasisSpec::new(5, M).unwrap();
        let field = CovarianceField::new(cfg.build().unwrap(), spec).unwrap();
        let x = SpectralState::zeros(6);
        let a = field.covariance_matrix(&x).unwrap();
        // Dense 2-D brute-force oracle on an independent midpoint grid.
        let oracle = |j: usize, k: usize| {
            let n = 20_000;
            (0..n)
                .map(|i| {
                    let y = (i as f64 + 0.5) / n as f64;
                    (1.0 + 0.5 * (2.0 * PI * y).cos()) * basis_value(j, y) * basis_value(k, y)
                })
                .sum::<f64>()
                / n as f64
        };
        assert!((a[(1, 3)] - 0.25).abs() < 1e-10);
        assert!((a[(1, 3)] - oracle(1, 3)).abs() < 1e-8);
        assert_eq!(a[(1, 3)], a[(3, 1)]);
        for j in 0..6 {
            for k in 0..6 {
                assert!((a[(j, k)] - oracle(j, k)).abs() < 1e-8, "({j},{k})");
            }
        }
        let split = field.toeplitz_split(&x).unwrap();
        let a1 = split.a1();
        let a2 = split.a2();
        for i in 1..6 {
            for j in 1..6 {
                let d = (i as usize).abs_diff(j);
                assert!(if d == 0 || d == 2 { true } else { a1[(i, j)].abs() < 1e-12 });
                assert!(if i + j == 2 { true } else { a2[(i, j)].abs() < 1e-12 }, "a2 ({i},{j})");
            }
        }
    }

    #[test]
    fn split_of_identity_field() {
        let spec = BasisSpec::new(6, M).unwrap();
        let field = CovarianceField::new(CoefficientOperator::constant(1.0), spec).unwrap();
        let split = field.toeplitz_split(&SpectralState::zeros(7)).unwrap();
        let a1 = split.a1();
        let a2 = split.a2();
        for i in 1..7 {
            for j in 1..7 {
                assert_eq!(a1[(i, j)], if i == j { 1.0 } else { 0.0 });
                assert_eq!(a2[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn split_reconstructs_and_is_toeplitz() {
        let spec = BasisSpec::new(10, M).unwrap();
        let field = CovarianceField::new(modulated("bump(0.4,0.3)".parse().unwrap()), spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = SpectralState::new((0..11).map(|_| rng.random_range(-2.0..2.0)).collect());
            let split = field.toeplitz_split(&x).unwrap();
            let a = field.covariance_matrix(&x).unwrap();
            assert!((split.a1() + split.a2() - &a).abs().max() <= 1e-10);
            let t = &a - split.a2();
            for d in 0..10 {
                let first = t[(1, 1 + d)];
                for i in 1..11 - d {
                    assert!((t[(i, i + d)] - first).abs() <= 1e-10);
                }
            }
            assert_eq!(a, a.transpose());
        }
    }

    #[test]
    fn spectral_sandwich() {
        let spec = BasisSpec::new(12, M).unwrap();
        let op = modulated(TestFunction::Basis(1));
        let k2 = op.kappa2 * op.kappa2;
        let field = CovarianceField::new(op, spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = SpectralState::new((0..13).map(|_| rng.random_range(-3.0..3.0)).collect());
            let z = nalgebra::DVector::from_fn(13, |_, _| rng.random_range(-1.0..1.0));
            let a = field.covariance_matrix(&x).unwrap();
            let q = z.dot(&(&a * &z));
            assert!(k2 * z.norm_squared() <= q && q <= z.norm_squared() / k2);
        }
    }

    #[test]
    fn convolution_output_is_even_and_periodic() {
        let op = convolution();
        let u = GridFunction::from_fn(M, |x| 2.0 * (3.0 * x).sin() + x);
        let idx: Vec<i64> = (0..=M as i64).step_by(16).collect();
        let neg: Vec<i64> = idx.iter().map(|i| -i).collect();
        let shifted: Vec<i64> = idx.iter().map(|i| i + 2 * M as i64).collect();
        let a = op.apply_on_line(&u, &idx).unwrap();
        let b = op.apply_on_line(&u, &neg).unwrap();
        let c = op.apply_on_line(&u, &shifted).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(&c) {
            assert!((x - y).abs() <= 1e-10 && (x - z).abs() <= 1e-10);
        }
    }

    #[test]
    fn fholder_constant_and_orthogonal_phi() {
        let spec = BasisSpec::new(8, M).unwrap();
        let u = vec![GridFunction::from_fn(M, |x| x)];
        let r = validate_fholder(&CoefficientOperator::constant(1.0), &spec, &u, &[0.1, 1.0], 8).unwrap();
        assert_eq!(r.kappa1, 0.0);
        assert!(r.per_k.iter().all(|(_, d)| *d == 0.0));

        let op = modulated(TestFunction::Basis(5));
        let r = validate_fholder(&op, &spec, &u, &[0.05, 0.5], 8).unwrap();
        for (k, d) in &r.per_k {
            if *k == 5 {
                assert!(*d > 1e-3);
            } else {
                assert!(*d < 1e-10, "k={k}: {d}");
            }
        }
    }

    #[test]
    fn fdecay_examples() {
        let spec = BasisSpec::new(24, M).unwrap();
        let u = GridFunction::from_fn(M, |x| x * x);
        let fit = validate_fdecay(&CoefficientOperator::constant(1.0), &spec, &u, 2.0).unwrap();
        assert!(fit.is_degenerate() && fit.pass);

        let coeffs: Vec<f64> = (1..=8).map(|k| ((1 + k) as f64).powi(-3)).collect();
        let cfg = OperatorConfig {
            kind: "inner_product".into(),
            kappa2: 0.8,
            alpha: 1.0,
            beta: 6.0,
            gamma: 3.0,
            value: None,
            f: Some(ProfileConfig::SquareRootSeries { coeffs }),
            phis: vec![TestFunction::Basis(1)],
            psi: None,
        };
        let fit = validate_fdecay(&cfg.build().unwrap(), &spec, &u, 3.0).unwrap();
        assert!((fit.exponent - 3.0).abs() <= 0.25, "{}", fit.exponent);
        assert!(fit.pass);
    }

    #[test]
    fn holder_probe_trivial_cases() {
        let spec = BasisSpec::new(6, M).unwrap();
        let x = SpectralState::new(vec![0.1, 0.5, -0.2, 0.0, 0.3, 0.0, 0.1]);
        let field = CovarianceField::new(modulated(TestFunction::Basis(1)), spec.clone()).unwrap();
        let r = holder_modulus_probe(&field, &[(x.clone(), x.clone())]).unwrap();
        assert_eq!(r.rows[0].schur_distance, 0.0);
        assert_eq!(r.rows[0].l2_distance, 0.0);
        assert_eq!(r.rows[0].d_alpha_beta, 0.0);

        let c = CovarianceField::new(CoefficientOperator::constant(1.2), spec).unwrap();
        let y = SpectralState::new(vec![1.0; 7]);
        let r = holder_modulus_probe(&c, &[(x, y)]).unwrap();
        assert_eq!(r.rows[0].schur_distance, 0.0);
    }

    #[test]
    fn truncation_clamps() {
        let x = SpectralState::new(vec![3.0, -5.0, 1.5]);
        assert_eq!(truncate_state(&x, 2.0).coeffs, vec![2.0, -2.0, 1.5]);
    }

    #[test]
    fn config_round_trip() {
        let json = r#"{"kind":"inner_product","kappa2":0.7,"alpha":0.9,"beta":6,"gamma":4,
            "f":{"kind":"modulated_holder","base":1.0,"amplitude":0.25,"mode":2,"alpha":0.9},
            "phis":["e_1","bump(0.5,0.25)"]}"#;
        let cfg: OperatorConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.phis[1], TestFunction::Bump { center: 0.5, width: 0.25 });
        let again: OperatorConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert!(cfg.build().is_ok());
        let bad = OperatorConfig { kind: "weird".into(), ..cfg };
        assert!(bad.build().is_err());
    }
}
