//! Random streams and the small statistics toolkit used by the Monte Carlo
//! estimators and the simulator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of batches behind every batch-means standard error.
pub const BATCHES: usize = 20;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream addressed by `(seed, ids...)`.
///
/// The stream depends only on its address, so results do not depend on how
/// work is split between threads.
pub fn stream(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for id in ids {
        h = splitmix64(h ^ splitmix64(id.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(h.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Compensated sum.
pub fn kahan_sum<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

pub fn mean(values: &[f64]) -> f64 {
    kahan_sum(values) / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    kahan_sum(&sq) / (values.len() as f64 - 1.0)
}

/// `(mean, standard error)` from [`BATCHES`] contiguous batch means.
pub fn batch_means(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let m = mean(values);
    if n < BATCHES {
        return (m, (variance(values) / n as f64).sqrt());
    }
    let means: Vec<f64> = (0..BATCHES)
        .map(|b| mean(&values[b * n / BATCHES..(b + 1) * n / BATCHES]))
        .collect();
    (m, (variance(&means) / BATCHES as f64).sqrt())
}

/// Kish effective sample size of importance weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s = kahan_sum(weights);
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    let s2 = kahan_sum(&sq);
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let a = sorted(a);
    let n = a.len() as f64;
    a.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical_two_sample(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Asymptotic one-sample KS critical value at level `alpha`.
pub fn ks_critical_one_sample(alpha: f64, n: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// 1-Wasserstein distance between two empirical laws on the line.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    // Integrate |F_a - F_b| over the merged support.
    let mut pts: Vec<f64> = a.iter().chain(&b).copied().collect();
    pts.sort_by(f64::total_cmp);
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    for w in pts.windows(2) {
        while i < a.len() && a[i] <= w[0] {
            i += 1;
        }
        while j < b.len() && b[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    total
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_addressed() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        let d: u64 = stream(8, &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn kahan_beats_naive() {
        let v: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(1e-16, 10_000)).collect();
        assert!((kahan_sum(&v) - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn ks_and_wasserstein() {
        let a = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(wasserstein1(&a, &a), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        assert!((wasserstein1(&a, &b) - 0.5).abs() < 1e-12);
        assert!((ks_two_sample(&a, &b) - 0.25).abs() < 1e-12);
        let c = [10.0, 11.0];
        assert_eq!(ks_two_sample(&a, &c), 1.0);
        assert!((ks_critical_two_sample(0.01, 2000, 2000) - 1.6276 * (0.001f64).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-13);
        assert!((normal_cdf(-2.5) - 0.006_209_665_325_776_132).abs() < 1e-13);
        assert!((normal_cdf(4.0) - 0.999_968_328_758_166_9).abs() < 1e-13);
    }

    #[test]
    fn batch_stderr_of_iid_noise() {
        let mut rng = stream(3, &[]);
        let v: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let (m, se) = batch_means(&v);
        assert!((m - 0.5).abs() < 4.0 * se);
        let exact = (1.0 / 12.0 / 20_000.0f64).sqrt();
        assert!(se > 0.4 * exact && se < 1.8 * exact);
        assert!((effective_sample_size(&[1.0; 10]) - 10.0).abs() < 1e-12);
    }
}
