//! Small statistics helpers used by the estimators and the experiment harness.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

pub fn rmse(errors: &[f64]) -> f64 {
    mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt()
}

pub fn mean_abs(errors: &[f64]) -> f64 {
    mean(&errors.iter().map(|e| e.abs()).collect::<Vec<_>>())
}

/// Mean and standard error of a weighted histogram of outcome values.
pub fn histogram_mean(values: &[f64], counts: &[u64]) -> (f64, f64) {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let m = values.iter().zip(counts).map(|(v, &c)| v * c as f64).sum::<f64>() / nf;
    if n < 2 {
        return (m, 0.0);
    }
    let var = values.iter().zip(counts).map(|(v, &c)| c as f64 * (v - m).powi(2)).sum::<f64>() / (nf - 1.0);
    (m, (var / nf).sqrt())
}

/// Standard deviation of `statistic` over `resamples` bootstrap replicates
/// produced by `resample`.
pub fn bootstrap_stderr<R, F>(resamples: usize, rng: &mut R, mut replicate: F) -> f64
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> f64,
{
    let reps: Vec<f64> = (0..resamples).map(|_| replicate(rng)).filter(|x| x.is_finite()).collect();
    sample_variance(&reps).sqrt()
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// A binomial proportion with its 95% Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn wilson(successes: u64, trials: u64) -> Proportion {
    const Z: f64 = 1.959_963_984_540_054;
    if trials == 0 {
        return Proportion { successes, trials, estimate: f64::NAN, ci_low: 0.0, ci_high: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Proportion { successes, trials, estimate: p, ci_low: (centre - half).max(0.0), ci_high: (centre + half).min(1.0) }
}

/// Two-sample Kolmogorov-Smirnov test. Returns `(D, p)` using the asymptotic
/// Kolmogorov distribution with the Stephens small-sample correction.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return (f64::NAN, f64::NAN);
    }
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-14 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
