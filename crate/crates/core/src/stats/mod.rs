//! Similarity statistic, generalized-normal fitting and tail estimates.

pub mod fit;
pub mod gamma;
pub mod gennorm;

pub use fit::fit_gennorm;
pub use gennorm::GenNormParams;

use crate::error::{PoaError, Result};
use crate::generator::Latent;

/// `(1/d) x · y`.
pub fn similarity(x: &Latent, y: &Latent) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(PoaError::shape(&x.shape(), &y.shape()));
    }
    Ok(dot_mean(x.data(), y.data()))
}

pub(crate) fn dot_mean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64
}

/// `ceil(ln²(1/α) · ln(1/δ))`.
pub fn required_samples(alpha: f64, delta: f64) -> Result<usize> {
    for (name, v) in [("alpha", alpha), ("delta", delta)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(PoaError::DomainError(format!("{name} = {v} outside (0, 1)")));
        }
    }
    let la = alpha.ln();
    Ok((la * la * -delta.ln()).ceil() as usize)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// the fitted CDF. An empty sample yields NaN.
pub fn ks_distance(samples: &[f64], params: &GenNormParams) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut worst = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = params.cdf(*x)?;
        worst = worst.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    Ok(worst)
}

/// `max(0, score) >= threshold`.
pub fn ump_decision(score: f64, quantile_threshold: f64) -> bool {
    score.max(0.0) >= quantile_threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_of_sample_sizes() {
        // 40-digit values of the product: 331.885..., 2986.966..., 8297.129...
        let d = 1e-3;
        assert_eq!(required_samples(2f64.powi(-10), d).unwrap(), 332);
        assert_eq!(required_samples(2f64.powi(-30), d).unwrap(), 2987);
        assert_eq!(required_samples(2f64.powi(-50), d).unwrap(), 8298);
        assert!(required_samples(0.0, d).is_err());
        assert!(required_samples(0.5, 1.0).is_err());
    }

    #[test]
    fn similarity_basics() {
        let x = Latent::new([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(similarity(&x, &x).unwrap(), 7.5);
        assert_eq!(similarity(&x, &Latent::zeros([1, 1, 4])).unwrap(), 0.0);
        assert!(similarity(&x, &Latent::zeros([1, 2, 2])).is_err());
    }

    #[test]
    fn single_sample_ks() {
        let p = GenNormParams::new(0.0, 1.0, 2.0).unwrap();
        assert_eq!(ks_distance(&[0.0], &p).unwrap(), 0.5);
    }

    #[test]
    fn ump_clamp_and_boundary() {
        assert!(!ump_decision(-3.0, 0.1));
        assert!(ump_decision(0.4, 0.4));
        assert!(ump_decision(-1.0, 0.0));
    }
}
