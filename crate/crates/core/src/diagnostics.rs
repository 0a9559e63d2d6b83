//! Chain diagnostics and small statistical helpers shared by the calibration
//! tests: autocorrelation, effective sample size, Kolmogorov-Smirnov tests and
//! type-7 quantiles.

/// Sample autocorrelation at `lag` (biased autocovariance normalised by the
/// lag-0 value).
pub fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    let n = values.len();
    if lag >= n || n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = values[..n - lag]
        .iter()
        .zip(&values[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    cov / var
}

/// Effective sample size using Geyer's initial monotone positive sequence.
///
/// Autocorrelations are computed lazily, lag by lag, so well-mixing chains
/// cost only a few passes.
pub fn effective_sample_size(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return n as f64;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
            / c0
    };

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = tau.max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64)
}

/// Kolmogorov distribution tail `P(K > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test: `(D, asymptotic p-value)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let p = kolmogorov_tail((en + 0.12 + 0.11 / en) * d);
    (d, p)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (k, &v) in s.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - k as f64 / n).max((k + 1) as f64 / n - f);
    }
    let en = n.sqrt();
    (d, kolmogorov_tail((en + 0.12 + 0.11 / en) * d))
}

/// Type-7 (linear interpolation) quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Mean, standard deviation, ESS and leading autocorrelations of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub acf: Vec<f64>,
}

pub fn summarize_trace(values: &[f64], max_lag: usize) -> TraceSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    TraceSummary {
        mean,
        sd,
        ess: effective_sample_size(values),
        acf: (1..=max_lag).map(|l| autocorrelation(values, l)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn quantiles_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.1) - 1.3).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn ess_of_white_noise_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&v);
        assert!(ess > 17_000.0, "{ess}");
    }

    #[test]
    fn ess_of_ar1_matches_theory() {
        // AR(1) with phi: tau = (1 + phi) / (1 - phi).
        let phi: f64 = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = 0.0;
        let v: Vec<f64> = (0..200_000)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let ess = effective_sample_size(&v);
        let expect = 200_000.0 * (1.0 - phi) / (1.0 + phi);
        assert!((ess / expect - 1.0).abs() < 0.1, "{ess} vs {expect}");
        assert!((autocorrelation(&v, 1) - phi).abs() < 0.01);
    }

    #[test]
    fn ks_detects_shift_and_accepts_same() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = b.iter().map(|v| v + 0.2).collect();
        assert!(ks_two_sample(&a, &b).1 > 0.001);
        assert!(ks_two_sample(&a, &c).1 < 1e-6);
        let (_, p) = ks_one_sample(&a, |x| 0.5 * statrs::function::erf::erfc(-x / 2f64.sqrt()));
        assert!(p > 0.001);
    }
}
