//! Small statistics toolkit shared by the Monte Carlo experiments.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Standard error of the mean of i.i.d. samples.
pub fn std_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    let n = Normal::standard();
    2.0 * (1.0 - n.cdf(z.abs()))
}

/// Kolmogorov distribution tail `Q(λ) = 2 Σ (−1)^{j−1} e^{−2j²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-14 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    (d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d))
}

/// One-sample Kolmogorov–Smirnov test against `N(0, var)`: `(D, p)`.
pub fn ks_normal(x: &[f64], var: f64) -> (f64, f64) {
    let n = Normal::new(0.0, var.sqrt()).expect("positive variance");
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let len = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = n.cdf(x);
            (c - i as f64 / len).max((i + 1) as f64 / len - c)
        })
        .fold(0.0, f64::max);
    let sq = len.sqrt();
    (d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d))
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_sf(stat: f64, dof: f64) -> f64 {
    let c = ChiSquared::new(dof).expect("positive degrees of freedom");
    1.0 - c.cdf(stat)
}

/// Pearson goodness of fit of samples to `N(0, var)` over `bins` equiprobable cells.
pub fn chi_square_normal(x: &[f64], var: f64, bins: usize) -> (f64, f64) {
    let n = Normal::new(0.0, var.sqrt()).expect("positive variance");
    let mut counts = vec![0u64; bins];
    for &v in x {
        let u = n.cdf(v);
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let e = x.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    (stat, chi_square_sf(stat, (bins - 1) as f64))
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Domain("regression needs at least two paired points".into()));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("regression abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    Ok((my - b * mx, b))
}

/// Percentile interval of a statistic under resampling of `n` indices.
pub fn bootstrap_interval(
    n: usize,
    reps: usize,
    level: f64,
    rng: &mut ChaCha8Rng,
    stat: impl Fn(&[usize]) -> f64,
) -> (f64, f64) {
    let mut vals: Vec<f64> = (0..reps)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            stat(&idx)
        })
        .filter(|v| v.is_finite())
        .collect();
    vals.sort_by(f64::total_cmp);
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let q = |p: f64| vals[((p * (vals.len() - 1) as f64).round() as usize).min(vals.len() - 1)];
    let tail = (1.0 - level) / 2.0;
    (q(tail), q(1.0 - tail))
}

/// Integrated autocorrelation time with Sokal's automatic window (`c = 5`).
pub fn integrated_autocorrelation_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(x);
    let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for t in 1..n / 2 {
        let ct: f64 = (0..n - t).map(|i| (x[i] - m) * (x[i + t] - m)).sum::<f64>() / n as f64;
        tau += 2.0 * ct / c0;
        if (t as f64) >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Gelman–Rubin potential scale reduction over equally long chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) as f64;
    if m < 2.0 || n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / m;
    if w == 0.0 {
        return 1.0;
    }
    let var_hat = (n - 1.0) / n * w + b / n;
    (var_hat / w).sqrt()
}

/// Sample central moment `E(x − μ)^k` for `k ≥ 2`, raw mean for `k = 1`.
pub fn moment(x: &[f64], k: u32) -> f64 {
    let m = mean(x);
    if k == 1 {
        return m;
    }
    x.iter().map(|v| (v - m).powi(k as i32)).sum::<f64>() / x.len() as f64
}

/// z-test that two independent samples share the `k`-th raw moment; the
/// standard error is estimated from `x^k`.
pub fn moment_z_test(a: &[f64], b: &[f64], k: u32) -> (f64, f64) {
    let pa: Vec<f64> = a.iter().map(|v| v.powi(k as i32)).collect();
    let pb: Vec<f64> = b.iter().map(|v| v.powi(k as i32)).collect();
    let se = (std_error(&pa).powi(2) + std_error(&pb).powi(2)).sqrt();
    if se == 0.0 {
        let same = (mean(&pa) - mean(&pb)).abs() == 0.0;
        return (0.0, if same { 1.0 } else { 0.0 });
    }
    let z = (mean(&pa) - mean(&pb)) / se;
    (z, normal_two_sided(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn ks_normal_accepts_and_rejects() {
        let x = normals(3, 2000);
        assert!(ks_normal(&x, 1.0).1 > 0.01);
        assert!(ks_normal(&x, 2.0).1 < 1e-6);
    }

    #[test]
    fn basic_moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(moment(&x, 1), 2.5);
        assert!((moment(&x, 2) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a = normals(1, 2000);
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
        let b: Vec<f64> = normals(2, 2000).iter().map(|v| v + 0.5).collect();
        assert!(ks_two_sample(&a, &b).1 < 1e-6);
        let c = normals(3, 2000);
        assert!(ks_two_sample(&a, &c).1 > 0.001);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Q(1.36) ≈ 0.049, Q(1.63) ≈ 0.0098
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_q(1.63) - 0.0098).abs() < 5e-4);
    }

    #[test]
    fn chi_square_accepts_normals() {
        let x = normals(4, 100_000);
        let (_, p) = chi_square_normal(&x, 1.0, 50);
        assert!(p > 0.001);
        let (_, p) = chi_square_normal(&x, 1.3, 50);
        assert!(p < 1e-6);
    }

    #[test]
    fn regression_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let (a, b) = linear_fit(&x, &y).unwrap();
        assert!((a - 1.5).abs() < 1e-14 && (b + 2.0).abs() < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn iat_of_ar1() {
        let rho: f64 = 0.8;
        let e = normals(5, 200_000);
        let mut x = vec![0.0; e.len()];
        for i in 1..e.len() {
            x[i] = rho * x[i - 1] + e[i];
        }
        let tau = integrated_autocorrelation_time(&x);
        let exact = (1.0 + rho) / (1.0 - rho);
        assert!((tau / exact - 1.0).abs() < 0.1, "{tau}");
        assert!((integrated_autocorrelation_time(&e) - 1.0).abs() < 0.1);
    }

    #[test]
    fn gelman_rubin_flags_split_chains() {
        let a = normals(6, 1000);
        let b = normals(7, 1000);
        assert!(gelman_rubin(&[a.clone(), b.clone()]) < 1.05);
        let shifted: Vec<f64> = b.iter().map(|v| v + 3.0).collect();
        assert!(gelman_rubin(&[a, shifted]) > 1.1);
    }

    #[test]
    fn bootstrap_interval_covers_mean() {
        let x = normals(8, 500);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lo, hi) = bootstrap_interval(x.len(), 300, 0.95, &mut rng, |idx| {
            idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64
        });
        assert!(lo < mean(&x) && mean(&x) < hi);
        assert!(hi - lo < 0.3);
    }

    #[test]
    fn moment_tests() {
        let a = normals(9, 5000);
        let b = normals(10, 5000);
        for k in 1..=4 {
            assert!(moment_z_test(&a, &b, k).1 > 0.001);
        }
        let c: Vec<f64> = b.iter().map(|v| v * 1.3).collect();
        assert!(moment_z_test(&a, &c, 2).1 < 1e-6);
    }
}
