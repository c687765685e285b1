//! Small statistical helpers for the validation harness.

use statrs::distribution::{ContinuousCDF, Normal};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    covariance(xs, xs)
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my))) / (xs.len() as f64 - 1.0)
}

/// Kolmogorov-Smirnov statistic of `xs` against `N(mu, sigma^2)`.
pub fn ks_statistic(xs: &[f64], mu: f64, sigma: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf((x - mu) / sigma);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic `d` at sample size `n`, using the
/// Kolmogorov series with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        // 1 - Phi(1.64), tabulated
        assert!((1.0 - normal_cdf(1.64) - 0.050502583474103746).abs() < 1e-10);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn ks_p_value_limits() {
        // classical 5% critical value of the Kolmogorov distribution
        let d = 1.358 / (1000f64).sqrt();
        let p = ks_p_value(d / (1.0 + (0.12 + 0.11 / 1000f64.sqrt()) / 1000f64.sqrt()), 1000);
        assert!((p - 0.05).abs() < 2e-3, "{p}");
        assert_eq!(ks_p_value(0.0, 100), 1.0);
        assert!(ks_p_value(0.5, 100) < 1e-10);
    }

    #[test]
    fn ks_statistic_of_quantiles() {
        use statrs::distribution::Normal;
        let n = 500;
        let xs: Vec<f64> = (0..n)
            .map(|i| Normal::standard().inverse_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        let d = ks_statistic(&xs, 0.0, 1.0);
        assert!((d - 0.5 / n as f64).abs() < 1e-9, "{d}");
    }
}
