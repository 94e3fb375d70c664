//! Neumann cosine eigenbasis on `[0, 1]`.
//!
//! `e_0 = 1`, `e_n(x) = sqrt(2) cos(n pi x)` for `n >= 1`, with
//! `(1/2) e_n'' = -lambda_n e_n` and `lambda_n = n^2 pi^2 / 2`. Functions are
//! carried as samples on the uniform grid `x_m = m / M` and integrated with
//! composite Simpson.

use std::f64::consts::{PI, SQRT_2};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{decay_rate_fit, DecayFit};

pub const DEFAULT_GRID_POINTS: usize = 4096;
pub const MIN_GRID_POINTS: usize = 256;

/// `lambda_n = n^2 pi^2 / 2`.
#[inline]
pub fn lambda(n: usize) -> f64 {
    let n = n as f64;
    n * n * PI * PI / 2.0
}

/// Truncation level, eigenvalues and quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    k: usize,
    lambdas: Vec<f64>,
    grid_points: usize,
    weights: Vec<f64>,
}

impl BasisSpec {
    /// `grid_points` must be even and at least [`MIN_GRID_POINTS`].
    pub fn new(k: usize, grid_points: usize) -> Result<Self> {
        if grid_points < MIN_GRID_POINTS || grid_points % 2 != 0 {
            return Err(Error::Config(format!(
                "grid_points must be even and >= {MIN_GRID_POINTS}, got {grid_points}"
            )));
        }
        let lambdas = (0..=k).map(lambda).collect();
        Ok(BasisSpec { k, lambdas, grid_points, weights: simpson_weights(grid_points) })
    }

    pub fn with_default_grid(k: usize) -> Self {
        Self::new(k, DEFAULT_GRID_POINTS).expect("default grid is valid")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of coefficients, `K + 1`.
    pub fn dim(&self) -> usize {
        self.k + 1
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn grid_points(&self) -> usize {
        self.grid_points
    }

    /// Simpson weights (already scaled by the grid step).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let m = self.grid_points as f64;
        (0..=self.grid_points).map(move |i| i as f64 / m)
    }

    /// Same grid, different truncation.
    pub fn with_k(&self, k: usize) -> Self {
        BasisSpec {
            k,
            lambdas: (0..=k).map(lambda).collect(),
            grid_points: self.grid_points,
            weights: self.weights.clone(),
        }
    }

    pub fn eigenvalue(&self, n: usize) -> Result<f64> {
        if n > self.k {
            return Err(Error::Range { index: n, max: self.k });
        }
        Ok(self.lambdas[n])
    }

    /// Simpson quadrature of grid samples over `[0, 1]`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(dot(&self.weights, values))
    }

    pub fn project(&self, f: &GridFunction, n: usize) -> Result<f64> {
        if n > self.k {
            return Err(Error::Range { index: n, max: self.k });
        }
        self.check_len(f.len())?;
        let m = self.grid_points as f64;
        Ok(f.values
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(i, (v, w))| v * w * basis_value(n, i as f64 / m))
            .sum())
    }

    /// All coefficients `<f, e_n>` for `n = 0..=K`.
    pub fn project_all(&self, f: &GridFunction) -> Result<SpectralState> {
        (0..=self.k).map(|n| self.project(f, n)).collect::<Result<Vec<_>>>().map(SpectralState::new)
    }

    /// Partial sum `sum_{n <= K} x_n e_n` sampled on the grid.
    pub fn reconstruct(&self, state: &SpectralState) -> Result<GridFunction> {
        if state.len() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), got: state.len() });
        }
        let values = self
            .grid()
            .map(|x| state.coeffs.iter().enumerate().map(|(n, c)| c * basis_value(n, x)).sum())
            .collect();
        Ok(GridFunction { values })
    }

    /// Samples of `e_n` on this grid.
    pub fn basis_samples(&self, n: usize) -> GridFunction {
        GridFunction::from_fn(self.grid_points, |x| basis_value(n, x))
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.grid_points + 1 {
            return Err(Error::Shape { expected: self.grid_points + 1, got });
        }
        Ok(())
    }
}

pub(crate) fn simpson_weights(m: usize) -> Vec<f64> {
    let h = 1.0 / m as f64;
    (0..=m)
        .map(|i| {
            let c = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn basis_value(n: usize, x: f64) -> f64 {
    if n == 0 {
        1.0
    } else {
        SQRT_2 * (n as f64 * PI * x).cos()
    }
}

/// `e_n(x)`; `x` must lie in `[0, 1]`.
pub fn basis_eval(n: usize, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain { what: "basis point", value: x });
    }
    Ok(basis_value(n, x))
}

/// Samples of a continuous function at `x_m = m / M`, `m = 0..=M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Shape { expected: 3, got: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain { what: "grid sample", value: *v });
        }
        Ok(GridFunction { values })
    }

    pub fn from_fn(grid_points: usize, f: impl Fn(f64) -> f64) -> Self {
        let m = grid_points as f64;
        GridFunction { values: (0..=grid_points).map(|i| f(i as f64 / m)).collect() }
    }

    pub fn constant(grid_points: usize, c: f64) -> Self {
        GridFunction { values: vec![c; grid_points + 1] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid_points(&self) -> usize {
        self.values.len() - 1
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction { values: self.values.iter().map(|v| f(*v)).collect() }
    }

    pub fn axpy(&self, a: f64, other: &GridFunction) -> Self {
        GridFunction {
            values: self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect(),
        }
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Value of the even, 2-periodic extension at any real `x`, linearly
    /// interpolated between grid nodes.
    pub fn extension_eval(&self, x: f64) -> f64 {
        let mut y = x.abs() % 2.0;
        if y > 1.0 {
            y = 2.0 - y;
        }
        let m = self.grid_points();
        let s = y * m as f64;
        let i = (s.floor() as usize).min(m - 1);
        let frac = s - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// CSV with header `x,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "value"])?;
        let m = self.grid_points() as f64;
        for (i, v) in self.values.iter().enumerate() {
            wtr.serialize((i as f64 / m, v))?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut values = Vec::new();
        for rec in rdr.deserialize() {
            let (_, v): (f64, f64) = rec?;
            values.push(v);
        }
        GridFunction::new(values)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}

/// `f̄(x)` for the even 2-periodic extension of `f`.
pub fn even_periodic_extension_eval(f: &GridFunction, x: f64) -> f64 {
    f.extension_eval(x)
}

/// Coefficient vector `x_0..x_K` of `u = sum x_n e_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub coeffs: Vec<f64>,
}

impl SpectralState {
    pub fn new(coeffs: Vec<f64>) -> Self {
        SpectralState { coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        SpectralState { coeffs: vec![0.0; dim] }
    }

    /// Unit vector in coordinate `n`.
    pub fn unit(dim: usize, n: usize) -> Self {
        let mut s = Self::zeros(dim);
        s.coeffs[n] = 1.0;
        s
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// CSV with header `n,coeff`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "coeff"])?;
        for (n, c) in self.coeffs.iter().enumerate() {
            wtr.serialize((n, c))?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut coeffs = Vec::new();
        for rec in rdr.deserialize() {
            let (n, c): (usize, f64) = rec?;
            if n != coeffs.len() {
                return Err(Error::Config(format!("coefficient index {n} out of order")));
            }
            coeffs.push(c);
        }
        Ok(SpectralState { coeffs })
    }
}

/// Log-log fit of `|<f, e_n>|` against `n` for `n` in `2..=n_max`.
///
/// Passes when the fitted decay exponent is at least `zeta - 0.25`; when all
/// coefficients are numerically zero the fit is degenerate and passes.
pub fn fourier_decay_check(
    spec: &BasisSpec,
    f: &GridFunction,
    zeta: f64,
    n_max: usize,
) -> Result<DecayFit> {
    if !(zeta > 0.0) {
        return Err(Error::Domain { what: "zeta", value: zeta });
    }
    if n_max > spec.k() {
        return Err(Error::Range { index: n_max, max: spec.k() });
    }
    let ns: Vec<f64> = (2..=n_max).map(|n| n as f64).collect();
    let coeffs = (2..=n_max).map(|n| spec.project(f, n)).collect::<Result<Vec<_>>>()?;
    Ok(decay_rate_fit(&ns, &coeffs, zeta - 0.25))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigenvalues() {
        let spec = BasisSpec::with_default_grid(4);
        assert_eq!(spec.eigenvalue(0).unwrap(), 0.0);
        assert_relative_eq!(spec.eigenvalue(1).unwrap(), 4.934802200544679, epsilon = 1e-12);
        assert_relative_eq!(spec.eigenvalue(3).unwrap(), 44.41321980490211, epsilon = 1e-10);
        assert!(matches!(spec.eigenvalue(5), Err(Error::Range { .. })));
    }

    #[test]
    fn eigenvalue_growth_bounds() {
        let kappa = (PI * PI / 2.0).min(2.0 / (PI * PI));
        for n in 1..200 {
            let l = lambda(n);
            let n2 = (n * n) as f64;
            assert!(kappa * n2 <= l * (1.0 + 1e-12) && l <= n2 / kappa * (1.0 + 1e-12));
        }
    }

    #[test]
    fn basis_values() {
        assert_eq!(basis_eval(0, 0.37).unwrap(), 1.0);
        assert_relative_eq!(basis_eval(1, 0.0).unwrap(), SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(basis_eval(2, 0.5).unwrap(), -SQRT_2, epsilon = 1e-14);
        assert!(basis_eval(1, 1.5).is_err());
        assert!(basis_eval(1, -0.1).is_err());
    }

    #[test]
    fn projections() {
        let spec = BasisSpec::with_default_grid(8);
        let one = GridFunction::constant(4096, 1.0);
        assert_relative_eq!(spec.project(&one, 0).unwrap(), 1.0, epsilon = 1e-12);
        let e3 = spec.basis_samples(3);
        assert!((spec.project(&e3, 3).unwrap() - 1.0).abs() < 1e-8);
        assert!(spec.project(&e3, 2).unwrap().abs() < 1e-8);
        let short = GridFunction::constant(512, 1.0);
        assert!(matches!(spec.project(&short, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn orthonormality_block() {
        let spec = BasisSpec::with_default_grid(32);
        for m in 0..=32 {
            let em = spec.basis_samples(m);
            for n in 0..=32 {
                let want = if m == n { 1.0 } else { 0.0 };
                assert!((spec.project(&em, n).unwrap() - want).abs() <= 1e-8, "({m},{n})");
            }
        }
    }

    #[test]
    fn eigenrelation_second_difference() {
        let spec = BasisSpec::with_default_grid(6);
        let m = spec.grid_points();
        let h = 1.0 / m as f64;
        for n in 1..=6 {
            let e = spec.basis_samples(n);
            let v = e.values();
            let err = (1..m)
                .map(|i| {
                    let lap = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
                    (lap + 2.0 * lambda(n) * v[i]).abs()
                })
                .fold(0.0, f64::max);
            // O(M^-2) with constant ~ (n pi)^4 sqrt 2 / 12
            // plus rounding of the difference quotient, about 4 eps sqrt2 / h^2
            let bound = (n as f64 * PI).powi(4) * SQRT_2 / 12.0 * h * h * 1.01 + 4.0 * f64::EPSILON * SQRT_2 / (h * h);
            assert!(err <= bound, "n={n}: {err} > {bound}");
        }
    }

    #[test]
    fn reconstruct_round_trip() {
        let spec = BasisSpec::with_default_grid(5);
        let x = SpectralState::new(vec![0.3, -1.2, 0.5, 0.0, 2.0, -0.7]);
        let u = spec.reconstruct(&x).unwrap();
        for n in 0..=5 {
            assert!((spec.project(&u, n).unwrap() - x.coeffs[n]).abs() < 1e-8);
        }
        let c = spec.reconstruct(&SpectralState::unit(6, 0)).unwrap();
        assert!(c.values().iter().all(|v| *v == 1.0));
        let e1 = spec.reconstruct(&SpectralState::unit(6, 1)).unwrap();
        assert!(e1.sup_distance(&spec.basis_samples(1)) < 1e-15);
        assert!(spec.reconstruct(&SpectralState::zeros(3)).is_err());
    }

    #[test]
    fn extension_rules() {
        let f = GridFunction::from_fn(1000, |x| x * x + x.sin());
        let at = |x: f64| f.extension_eval(x);
        assert_relative_eq!(at(-0.3), at(0.3), epsilon = 1e-12);
        assert_relative_eq!(at(2.3), at(0.3), epsilon = 1e-12);
        assert_relative_eq!(at(1.4), at(0.6), epsilon = 1e-12);
        assert_relative_eq!(at(0.25), 0.0625 + 0.25f64.sin(), epsilon = 1e-6);
        for x in [0.125, 0.5, 0.875, 1.25, 3.5] {
            assert_eq!(at(-x), at(x));
            assert_eq!(at(x + 2.0), at(x));
        }
    }

    #[test]
    fn decay_checks() {
        let spec = BasisSpec::with_default_grid(64);
        let e1 = spec.basis_samples(1);
        assert!(fourier_decay_check(&spec, &e1, 2.0, 32).unwrap().is_degenerate());

        // Oracle: <x^2, e_n> = (-1)^n 2 sqrt2 / (n^2 pi^2).
        let sq = GridFunction::from_fn(4096, |x| x * x);
        for n in 2..10 {
            let exact = if n % 2 == 0 { 1.0 } else { -1.0 } * 2.0 * SQRT_2 / ((n * n) as f64 * PI * PI);
            assert!((spec.project(&sq, n).unwrap() - exact).abs() < 1e-10);
        }
        let fit = fourier_decay_check(&spec, &sq, 2.0, 32).unwrap();
        assert!((1.75..=2.25).contains(&fit.exponent), "{}", fit.exponent);
        assert!(fit.pass);

        // Periodic von Mises bump exp(4 (cos 2 pi (x - 1/2) - 1)); its cosine
        // coefficients are (-1)^m sqrt2 I_m(4) e^-4 at n = 2m and vanish at odd n.
        let bump = GridFunction::from_fn(4096, |x| (4.0 * ((2.0 * PI * (x - 0.5)).cos() - 1.0)).exp());
        let bessel = |m: i32, z: f64| -> f64 {
            let mut term = (z / 2.0).powi(m) / (1..=m).map(f64::from).product::<f64>();
            let mut sum = term;
            for j in 1..60 {
                term *= (z / 2.0).powi(2) / (j as f64 * (j + m) as f64);
                sum += term;
            }
            sum
        };
        for m in 1..6 {
            let exact = if m % 2 == 0 { 1.0 } else { -1.0 } * SQRT_2 * bessel(m, 4.0) * (-4.0f64).exp();
            assert!((spec.project(&bump, 2 * m as usize).unwrap() - exact).abs() < 1e-12);
            assert!(spec.project(&bump, 2 * m as usize + 1).unwrap().abs() < 1e-12);
        }
        let fit = fourier_decay_check(&spec, &bump, 6.0, 64).unwrap();
        assert!(fit.exponent >= 6.0, "{}", fit.exponent);
        assert!(fourier_decay_check(&spec, &bump, 6.0, 65).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let f = GridFunction::from_fn(256, |x| x.cos());
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x,value\n"));
        let g = GridFunction::read_csv(&buf[..]).unwrap();
        assert_eq!(f, g);

        let s = SpectralState::new(vec![1.0, -0.5, 0.25]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"n,coeff\n"));
        assert_eq!(SpectralState::read_csv(&buf[..]).unwrap(), s);
    }
}
