//! Exact Pólya-Gamma sampling.
//!
//! `PG(1, z)` is drawn with the alternating-series accept/reject scheme of
//! Devroye as adapted by Polson, Scott and Windle: propose from a mixture of a
//! truncated inverse Gaussian (left of the truncation point) and an exponential
//! tail (right of it), then accept or reject using partial sums of the Jacobi
//! series, stopping only once the bracket decides. `PG(b, z)` for integer `b`
//! is the sum of `b` independent unit draws.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_2_PI, PI};

use crate::error::{Error, Result};

/// Truncation point of the proposal mixture.
const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / TRUNC;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgParams {
    /// Shape; the number of binomial trials in this model.
    pub b: u32,
    /// Tilt.
    pub z: f64,
}

impl PgParams {
    pub fn new(b: u32, z: f64) -> Result<Self> {
        if b == 0 {
            return Err(Error::input("Pólya-Gamma shape must be at least 1"));
        }
        if !z.is_finite() {
            return Err(Error::input(format!("Pólya-Gamma tilt must be finite, got {z}")));
        }
        Ok(PgParams { b, z })
    }
}

/// Draws one `PG(b, z)` variate.
pub fn sample_pg<R: Rng + ?Sized>(params: PgParams, rng: &mut R) -> Result<f64> {
    if params.b == 0 {
        return Err(Error::input("Pólya-Gamma shape must be at least 1"));
    }
    if !params.z.is_finite() {
        return Err(Error::input(format!(
            "Pólya-Gamma tilt must be finite, got {}",
            params.z
        )));
    }
    Ok(sample_pg_unchecked(params.b, params.z, rng))
}

/// `PG(b, z)` without argument checks; `b >= 1` and finite `z` are assumed.
#[inline]
pub(crate) fn sample_pg_unchecked<R: Rng + ?Sized>(b: u32, z: f64, rng: &mut R) -> f64 {
    let half = 0.5 * z.abs();
    let mix = proposal_mass_right(half);
    (0..b).map(|_| sample_pg1_half(half, mix, rng)).sum()
}

/// Analytic mean `b tanh(z/2) / (2z)`, with the limit `b/4` near zero.
pub fn pg_mean(params: PgParams) -> f64 {
    let b = params.b as f64;
    let z = params.z;
    if z.abs() < 1e-8 {
        b / 4.0
    } else {
        b * (0.5 * z).tanh() / (2.0 * z)
    }
}

/// Laplace transform `E[exp(-t w)]` of `PG(b, z)`:
/// `cosh(z/2)^b / cosh(sqrt(z^2 + 2t)/2)^b`.
pub fn pg_laplace(params: PgParams, t: f64) -> f64 {
    let b = params.b as f64;
    let z = params.z;
    ((0.5 * z).cosh() / (0.5 * (z * z + 2.0 * t).sqrt()).cosh()).powf(b)
}

/// One `PG(1, 2 * half)` draw, i.e. `J*(1, half) / 4`.
fn sample_pg1_half<R: Rng + ?Sized>(half: f64, mass_right: f64, rng: &mut R) -> f64 {
    let rate = 0.125 * PI * PI + 0.5 * half * half;
    loop {
        let x = if rng.random::<f64>() < mass_right {
            TRUNC + rng.sample::<f64, _>(Exp1) / rate
        } else {
            truncated_inverse_gaussian(half, rng)
        };

        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Probability of proposing from the exponential tail, `p / (p + q)`.
fn proposal_mass_right(half: f64) -> f64 {
    let rate = 0.125 * PI * PI + 0.5 * half * half;
    let root = TRUNC_RECIP.sqrt();
    let b = root * (TRUNC * half - 1.0);
    let a = -root * (TRUNC * half + 1.0);
    let x0 = rate.ln() + rate * TRUNC;
    let xb = x0 - half + log_normal_cdf(b);
    let xa = x0 + half + log_normal_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Coefficient `a_n(x)` of the alternating Jacobi series, using the
/// left-piece form below the truncation point and the right-piece form above.
#[inline]
fn series_coef(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (1.5 * (FRAC_2_PI / x).ln() + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

/// Inverse Gaussian with mean `1/half` and shape 1, truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(half: f64, rng: &mut R) -> f64 {
    if half < TRUNC_RECIP {
        // Mean beyond the truncation point: propose from the truncated
        // zero-tilt (Lévy) piece and accept with the tilt factor.
        loop {
            let mut e1: f64 = rng.sample(Exp1);
            let mut e2: f64 = rng.sample(Exp1);
            while e1 * e1 > 2.0 * e2 / TRUNC {
                e1 = rng.sample(Exp1);
                e2 = rng.sample(Exp1);
            }
            let denom = 1.0 + e1 * TRUNC;
            let x = TRUNC / (denom * denom);
            let accept = (-0.5 * half * half * x).exp();
            if rng.random::<f64>() <= accept {
                return x;
            }
        }
    } else {
        let mu = 1.0 / half;
        loop {
            let n: f64 = rng.sample(StandardNormal);
            let y = n * n;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < TRUNC {
                return x;
            }
        }
    }
}

/// `log Phi(x)` for the standard normal, accurate far into the lower tail.
pub(crate) fn log_normal_cdf(x: f64) -> f64 {
    if x > -20.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}


#[cfg(test)]
mod tests {
    use super::moments::mean_se;
    use super::*;
    use crate::diagnostics::ks_two_sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draws(b: u32, z: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PgParams::new(b, z).unwrap();
        (0..n).map(|_| sample_pg(p, &mut rng).unwrap()).collect()
    }

    #[test]
    fn mean_helper_values() {
        assert_eq!(pg_mean(PgParams::new(1, 0.0).unwrap()), 0.25);
        assert_eq!(pg_mean(PgParams::new(4, 0.0).unwrap()), 1.0);
        let m = pg_mean(PgParams::new(1, 2.0).unwrap());
        assert!((m - 1f64.tanh() / 4.0).abs() < 1e-15);
        assert!((m - 0.190_398_5).abs() < 1e-6);
        // Continuity across the small-z switch.
        let tiny = pg_mean(PgParams::new(1, 2e-8).unwrap());
        assert!((tiny - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(PgParams::new(0, 1.0).is_err());
        assert!(PgParams::new(1, f64::NAN).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pg(PgParams { b: 1, z: f64::INFINITY }, &mut rng).is_err());
    }

    #[test]
    fn sample_means_match_analytic() {
        for (b, z, seed) in [(1, 0.0, 1), (1, 2.0, 2), (2, 1.0, 3), (1, -4.5, 4), (3, 12.0, 5)] {
            let d = draws(b, z, 200_000, seed);
            let (mean, se) = mean_se(&d);
            let exact = pg_mean(PgParams::new(b, z).unwrap());
            assert!(
                (mean - exact).abs() < 4.0 * se,
                "b={b} z={z}: {mean} vs {exact} (se {se})"
            );
            assert!(d.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn large_tilt_is_finite_and_centered() {
        let d = draws(1, 300.0, 20_000, 9);
        let (mean, se) = mean_se(&d);
        let exact = pg_mean(PgParams::new(1, 300.0).unwrap());
        assert!((mean - exact).abs() < 4.0 * se);
    }

    #[test]
    fn laplace_transform_matches() {
        for (z, seed) in [(0.0, 21), (1.0, 22), (3.0, 23)] {
            let d = draws(1, z, 200_000, seed);
            for t in [0.5, 2.0] {
                let vals: Vec<f64> = d.iter().map(|w| (-w * t).exp()).collect();
                let (mean, se) = mean_se(&vals);
                let exact = pg_laplace(PgParams::new(1, z).unwrap(), t);
                assert!((mean - exact).abs() < 4.0 * se, "z={z} t={t}: {mean} vs {exact}");
            }
        }
    }

    #[test]
    fn shape_two_equals_sum_of_units() {
        let a = draws(2, 1.5, 100_000, 31);
        let ones = draws(1, 1.5, 200_000, 32);
        let sums: Vec<f64> = ones.chunks(2).map(|c| c[0] + c[1]).collect();
        let (_, p) = ks_two_sample(&a, &sums);
        assert!(p > 0.001, "KS p-value {p}");
    }

    #[test]
    fn log_cdf_tail_is_continuous() {
        let lo = log_normal_cdf(-20.0 - 1e-9);
        let hi = log_normal_cdf(-20.0 + 1e-9);
        assert!((lo - hi).abs() < 1e-6);
        assert!((log_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }
}
