//! Power-law regression shared by every decay and scaling check.
//!
//! Two models are fitted:
//!
//! * a pure power law `v = c * p^e` by least squares in log-log space
//!   ([`fit_power_law`], signed slope `e`);
//! * the offset decay law `v = c / (1 + d^q)` used for off-diagonal matrix
//!   decay, fitted by a one-dimensional search over `q` with `log c`
//!   eliminated in closed form ([`fit_offset_decay`]).
//!
//! Decay checks report the *rate* (a positive number for decaying data).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Values at or below this level are treated as numerically zero.
pub const ZERO_FLOOR: f64 = 1e-14;

/// Result of a log-log regression.
///
/// `exponent` is `+inf` when the data are degenerate (everything below the
/// zero floor), which counts as infinitely fast decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    #[serde(serialize_with = "ser_exponent", deserialize_with = "de_exponent")]
    pub exponent: f64,
    pub constant: f64,
    pub max_residual_ratio: f64,
    pub pass: bool,
}

fn ser_exponent<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_exponent<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl DecayFit {
    /// The fit used when every value sits below [`ZERO_FLOOR`].
    pub fn degenerate() -> Self {
        DecayFit { exponent: f64::INFINITY, constant: 0.0, max_residual_ratio: 1.0, pass: true }
    }

    pub fn is_degenerate(&self) -> bool {
        !self.exponent.is_finite()
    }

    /// Re-evaluate `pass` as `exponent >= min_exponent`.
    pub fn with_min_exponent(mut self, min_exponent: f64) -> Self {
        self.pass = self.exponent >= min_exponent;
        self
    }
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
pub(crate) fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// Least-squares fit of `value = constant * parameter^exponent` on
/// `(log parameter, log value)`.
///
/// Needs at least three pairs with positive parameters and values. The
/// returned exponent is the signed slope; `pass` is `true` (no target).
pub fn fit_power_law(pairs: &[(f64, f64)]) -> Result<DecayFit> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientSample { got: pairs.len(), needed: 3 });
    }
    for &(p, v) in pairs {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Domain { what: "power-law parameter", value: p });
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain { what: "power-law value", value: v });
        }
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let (a, b) = linear_regression(&xs, &ys);
    let max_res = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - a - b * x).abs())
        .fold(0.0, f64::max);
    Ok(DecayFit { exponent: b, constant: a.exp(), max_residual_ratio: max_res.exp(), pass: true })
}

/// Decay-rate fit of `values[i] ~ c * params[i]^(-rate)`.
///
/// Points whose value is at or below [`ZERO_FLOOR`] are dropped. With fewer
/// than two surviving points the fit is degenerate (infinite decay). The
/// returned fit passes when `rate >= min_rate`.
pub fn decay_rate_fit(params: &[f64], values: &[f64], min_rate: f64) -> DecayFit {
    let kept: Vec<(f64, f64)> = params
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() > ZERO_FLOOR)
        .map(|(p, v)| (*p, v.abs()))
        .collect();
    if kept.len() < 2 {
        return DecayFit::degenerate();
    }
    let xs: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let (a, b) = linear_regression(&xs, &ys);
    let max_res = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - a - b * x).abs())
        .fold(0.0, f64::max);
    DecayFit { exponent: -b, constant: a.exp(), max_residual_ratio: max_res.exp(), pass: true }
        .with_min_exponent(min_rate)
}

/// Fit `values[i] ~ c / (1 + dists[i]^q)` over positive distances.
///
/// Returns the best `(q, c, max_residual_ratio)` in log space, or `None` when
/// fewer than two values exceed the zero floor.
pub fn fit_offset_decay(dists: &[f64], values: &[f64]) -> Option<(f64, f64, f64)> {
    let kept: Vec<(f64, f64)> = dists
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() > ZERO_FLOOR)
        .map(|(d, v)| (*d, v.abs().ln()))
        .collect();
    if kept.len() < 2 {
        return None;
    }
    // For fixed q the optimal log c is the mean of log v + log(1 + d^q).
    let objective = |q: f64| -> (f64, f64) {
        let n = kept.len() as f64;
        let logc = kept.iter().map(|(d, lv)| lv + (1.0 + d.powf(q)).ln()).sum::<f64>() / n;
        let sse = kept
            .iter()
            .map(|(d, lv)| {
                let r = lv - logc + (1.0 + d.powf(q)).ln();
                r * r
            })
            .sum::<f64>();
        (sse, logc)
    };
    let (lo_q, hi_q) = (0.0, 60.0);
    let steps = 600;
    let mut best = (f64::INFINITY, 0.0);
    for s in 0..=steps {
        let q = lo_q + (hi_q - lo_q) * s as f64 / steps as f64;
        let (sse, _) = objective(q);
        if sse < best.0 {
            best = (sse, q);
        }
    }
    // Golden-section refinement around the best grid point.
    let h = (hi_q - lo_q) / steps as f64;
    let (mut a, mut b) = ((best.1 - h).max(lo_q), (best.1 + h).min(hi_q));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..80 {
        if objective(c).0 < objective(d).0 {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let q = 0.5 * (a + b);
    let (_, logc) = objective(q);
    let max_res = kept
        .iter()
        .map(|(dd, lv)| (lv - logc + (1.0 + dd.powf(q)).ln()).abs())
        .fold(0.0, f64::max);
    Some((q, logc.exp(), max_res.exp()))
}

/// Log-log slope of `ys` against `xs` (both positive).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_regression(&lx, &ly).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_power_data() {
        let pairs: Vec<_> = (1..8).map(|p| (p as f64, 3.0 * (p as f64).powi(2))).collect();
        let fit = fit_power_law(&pairs).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-12);
        assert!((fit.constant - 3.0).abs() < 1e-10);
    }

    #[test]
    fn constant_data_has_zero_exponent() {
        let pairs: Vec<_> = (1..6).map(|p| (p as f64, 0.7)).collect();
        let fit = fit_power_law(&pairs).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
    }

    #[test]
    fn noisy_synthetic_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<_> = (1..40)
            .map(|i| {
                let p = i as f64 * 0.5;
                let noise = 1.0 + rng.random_range(-0.05..0.05);
                (p, p.powf(-1.5) * noise)
            })
            .collect();
        let fit = fit_power_law(&pairs).unwrap();
        assert!((fit.exponent + 1.5).abs() < 0.1, "{}", fit.exponent);
    }

    #[test]
    fn rejects_nonpositive_values() {
        let pairs = [(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)];
        assert!(matches!(fit_power_law(&pairs), Err(Error::Domain { .. })));
        assert!(fit_power_law(&pairs[..2]).is_err());
    }

    #[test]
    fn offset_fit_recovers_exact_model() {
        let d: Vec<f64> = (1..20).map(|x| x as f64).collect();
        let v: Vec<f64> = d.iter().map(|x| 0.8 / (1.0 + x.powi(4))).collect();
        let (q, c, r) = fit_offset_decay(&d, &v).unwrap();
        assert!((q - 4.0).abs() < 1e-6, "{q}");
        assert!((c - 0.8).abs() < 1e-6);
        assert!(r < 1.0 + 1e-6);
    }

    #[test]
    fn degenerate_decay() {
        let fit = decay_rate_fit(&[2.0, 3.0, 4.0], &[0.0, 1e-16, 0.0], 3.0);
        assert!(fit.is_degenerate() && fit.pass);
        let json = serde_json::to_string(&fit).unwrap();
        let back: DecayFit = serde_json::from_str(&json).unwrap();
        assert!(back.is_degenerate());
    }
}
