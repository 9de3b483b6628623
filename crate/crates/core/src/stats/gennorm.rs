//! The generalized normal family with density
//! `β / (2γ Γ(1/β)) · exp(-(|x - μ| / γ)^β)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{PoaError, Result};
use crate::stats::gamma::{ln_gamma, ln_q};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenNormParams {
    pub mu: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl GenNormParams {
    pub fn new(mu: f64, gamma: f64, beta: f64) -> Result<Self> {
        let p = GenNormParams { mu, gamma, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu.is_finite()
            && self.gamma.is_finite()
            && self.beta.is_finite()
            && self.gamma > 0.0
            && self.beta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PoaError::InvalidParams(format!(
                "mu = {}, gamma = {}, beta = {}",
                self.mu, self.gamma, self.beta
            )))
        }
    }

    /// Normalizing constant `ln β - ln 2γ - lnΓ(1/β)`.
    fn ln_norm(&self) -> f64 {
        self.beta.ln() - (2.0 * self.gamma).ln() - ln_gamma(1.0 / self.beta)
    }

    fn ln_half_q(&self, x: f64) -> f64 {
        let z = (x - self.mu).abs() / self.gamma;
        ln_q(1.0 / self.beta, z.powf(self.beta)) - std::f64::consts::LN_2
    }

    pub fn logpdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        Ok(self.ln_norm() - ((x - self.mu).abs() / self.gamma).powf(self.beta))
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        Ok(self.logpdf(x)?.exp())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        let half_q = self.ln_half_q(x).exp();
        Ok(if x >= self.mu { 1.0 - half_q } else { half_q })
    }

    /// `ln P[X >= threshold]`.
    pub fn ln_tail(&self, threshold: f64) -> Result<f64> {
        self.validate()?;
        if threshold == f64::INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        if threshold == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        let l = self.ln_half_q(threshold);
        Ok(if threshold >= self.mu { l } else { (-l.exp()).ln_1p() })
    }

    /// `P[X >= threshold]`.
    pub fn tail_prob(&self, threshold: f64) -> Result<f64> {
        Ok(self.ln_tail(threshold)?.exp())
    }

    /// Smallest `x` with `ln P[X >= x] <= ln_target`, by bisection.
    pub fn quantile_ln_tail(&self, ln_target: f64) -> Result<f64> {
        self.validate()?;
        if !(ln_target <= 0.0) {
            return Err(PoaError::DomainError(format!("log tail {ln_target} must be <= 0")));
        }
        if ln_target == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        if ln_target == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let mut width = self.gamma;
        while self.ln_tail(self.mu - width)? < ln_target {
            width *= 2.0;
        }
        let mut lo = self.mu - width;
        let mut width = self.gamma;
        while self.ln_tail(self.mu + width)? > ln_target {
            width *= 2.0;
        }
        let mut hi = self.mu + width;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.ln_tail(mid)? > ln_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// Inverse CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(PoaError::DomainError(format!("probability {p} outside [0, 1]")));
        }
        self.quantile_ln_tail((-p).ln_1p())
    }

    /// Draws `μ ± γ G^{1/β}` with `G ~ Gamma(1/β, 1)` and a fair sign.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let g = Gamma::new(1.0 / self.beta, 1.0)
            .map_err(|e| PoaError::InvalidParams(e.to_string()))?;
        Ok((0..count)
            .map(|_| {
                let r = self.gamma * g.sample(rng).powf(1.0 / self.beta);
                if rng.gen::<bool>() {
                    self.mu + r
                } else {
                    self.mu - r
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gaussian_reduction() {
        let p = GenNormParams::new(0.3, std::f64::consts::SQRT_2, 2.0).unwrap();
        let std_normal = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((p.logpdf(0.3).unwrap() - std_normal).abs() < 1e-14);
        assert_eq!(p.cdf(0.3).unwrap(), 0.5);
        assert_eq!(p.tail_prob(0.3).unwrap(), 0.5);
    }

    #[test]
    fn laplace_tail() {
        let p = GenNormParams::new(0.0, 1.0, 1.0).unwrap();
        assert!((p.tail_prob(2f64.ln()).unwrap() - 0.25).abs() < 1e-15);
        assert!((p.cdf(-2f64.ln()).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        for (g, b) in [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0), (1.0, f64::NAN)] {
            let p = GenNormParams { mu: 0.0, gamma: g, beta: b };
            assert!(matches!(p.cdf(0.0), Err(PoaError::InvalidParams(_))));
        }
    }

    #[test]
    fn extreme_tail_stays_finite() {
        let p = GenNormParams::new(0.0, 1.0, 2.0).unwrap();
        let l = p.ln_tail(1e3).unwrap();
        assert!(l.is_finite() && l < -1e5);
        assert_eq!(p.ln_tail(f64::INFINITY).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let p = GenNormParams::new(1.0, 0.7, 1.3).unwrap();
        for prob in [0.01, 0.3, 0.5, 0.9, 1.0 - 2f64.powi(-8)] {
            let x = p.quantile(prob).unwrap();
            assert!((p.cdf(x).unwrap() - prob).abs() < 1e-12, "p = {prob}");
        }
        let x = p.quantile_ln_tail(-50.0 * std::f64::consts::LN_2).unwrap();
        assert!((p.ln_tail(x).unwrap() + 50.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn sampler_is_seeded() {
        let p = GenNormParams::new(0.0, 1.0, 1.5).unwrap();
        let mut a = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let mut b = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        assert_eq!(p.sample(&mut a, 10).unwrap(), p.sample(&mut b, 10).unwrap());
    }
}
