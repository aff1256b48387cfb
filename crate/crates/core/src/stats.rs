//! χ² tail probabilities and summary statistics.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper tail `P(χ²_df ≥ x)`. With `df = 0` the law is a point mass at zero.
pub fn chi2_sf(x: f64, df: u64) -> f64 {
    if df == 0 {
        return if x <= 0.0 { 1.0 } else { 0.0 };
    }
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).map_or(f64::NAN, |d| d.sf(x))
}

/// `P(χ²_df ≤ x)`.
pub fn chi2_cdf(x: f64, df: u64) -> f64 {
    1.0 - chi2_sf(x, df)
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and `χ²_df`.
pub fn ks_distance_chi2(xs: &[f64], df: u64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = chi2_cdf(x, df);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n − 1` divisor; zero for fewer than
/// two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
