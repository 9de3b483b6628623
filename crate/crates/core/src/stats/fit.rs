//! Maximum-likelihood fit of a generalized normal by Nelder–Mead.
//!
//! The search runs on standardized data `(x - median) / sd` over
//! `(μ, ln γ, ln β)`, which only shifts the log-likelihood by a constant, and
//! maps the optimum back at the end.

use crate::error::{PoaError, Result};
use crate::stats::gamma::ln_gamma;
use crate::stats::gennorm::GenNormParams;

pub const MIN_SAMPLES: usize = 8;
pub const BETA_MIN: f64 = 0.3;
pub const BETA_MAX: f64 = 10.0;
pub const SPREAD_TOL: f64 = 1e-10;
pub const MAX_EVALUATIONS: usize = 100_000;

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn clamp_beta(ln_beta: f64) -> f64 {
    ln_beta.exp().clamp(BETA_MIN, BETA_MAX)
}

/// Negative mean log-likelihood at `(μ, ln γ, ln β)`.
fn objective(z: &[f64], v: &[f64; 3]) -> f64 {
    let (mu, gamma, beta) = (v[0], v[1].exp(), clamp_beta(v[2]));
    if !gamma.is_finite() || gamma <= 0.0 {
        return f64::INFINITY;
    }
    let norm = beta.ln() - (2.0 * gamma).ln() - ln_gamma(1.0 / beta);
    let mean_pow = z.iter().map(|x| ((x - mu).abs() / gamma).powf(beta)).sum::<f64>() / z.len() as f64;
    let value = mean_pow - norm;
    if value.is_nan() {
        f64::INFINITY
    } else {
        value
    }
}

/// Mean log-likelihood of `samples` under `params`.
pub fn mean_log_likelihood(samples: &[f64], params: &GenNormParams) -> Result<f64> {
    let mut acc = 0.0;
    for x in samples {
        acc += params.logpdf(*x)?;
    }
    Ok(acc / samples.len() as f64)
}

pub fn fit_gennorm(samples: &[f64]) -> Result<GenNormParams> {
    if samples.len() < MIN_SAMPLES {
        return Err(PoaError::DomainError(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(PoaError::DomainError("samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(PoaError::DegenerateSample);
    }
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let centre = median(&sorted);
    // Sorting first makes the summation order, hence the result, independent
    // of the caller's ordering.
    let z: Vec<f64> = sorted.iter().map(|x| (x - centre) / sd).collect();

    let start = [0.0, std::f64::consts::SQRT_2.ln(), 2f64.ln()];
    let best = nelder_mead(|v| objective(&z, v), start, [0.25, 0.25, 0.25])?;
    GenNormParams::new(centre + sd * best[0], sd * best[1].exp(), clamp_beta(best[2]))
}

fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(f: F, start: [f64; 3], steps: [f64; 3]) -> Result<[f64; 3]> {
    let evaluations = std::cell::Cell::new(0usize);
    let eval = |v: &[f64; 3]| {
        evaluations.set(evaluations.get() + 1);
        f(v)
    };
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, eval(&start)));
    for i in 0..3 {
        let mut v = start;
        v[i] += steps[i];
        simplex.push((v, eval(&v)));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[3].1 - simplex[0].1;
        let origin = simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(v, _)| (0..3).map(move |i| (v[i] - origin[i]).abs()))
            .fold(0.0f64, f64::max);
        if spread.is_finite() && spread < SPREAD_TOL || diameter < 1e-14 {
            return Ok(simplex[0].0);
        }
        if evaluations.get() >= MAX_EVALUATIONS {
            return Err(PoaError::NonConvergence {
                evaluations: evaluations.get(),
            });
        }
        let mut centroid = [0.0; 3];
        for (v, _) in &simplex[..3] {
            for i in 0..3 {
                centroid[i] += v[i] / 3.0;
            }
        }
        let along = |t: f64| -> [f64; 3] {
            let w = simplex[3].0;
            [
                centroid[0] + t * (centroid[0] - w[0]),
                centroid[1] + t * (centroid[1] - w[1]),
                centroid[2] + t * (centroid[2] - w[2]),
            ]
        };
        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[3].1 {
            let c = along(0.5);
            (c, eval(&c))
        } else {
            let c = along(-0.5);
            (c, eval(&c))
        };
        if fc < simplex[3].1.min(fr) {
            simplex[3] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0;
        for entry in simplex.iter_mut().skip(1) {
            let mut v = entry.0;
            for i in 0..3 {
                v[i] = best[i] + 0.5 * (v[i] - best[i]);
            }
            *entry = (v, eval(&v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_and_degenerate() {
        assert!(matches!(fit_gennorm(&[1.0; 7]), Err(PoaError::DomainError(_))));
        assert!(matches!(fit_gennorm(&[2.5; 20]), Err(PoaError::DegenerateSample)));
        let mut with_nan = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        with_nan[3] = f64::NAN;
        assert!(fit_gennorm(&with_nan).is_err());
    }

    #[test]
    fn quadratic_minimum() {
        let v = nelder_mead(
            |v| (v[0] - 1.0).powi(2) + 2.0 * (v[1] + 0.5).powi(2) + (v[2] - 3.0).powi(2),
            [0.0; 3],
            [0.5; 3],
        )
        .unwrap();
        assert!((v[0] - 1.0).abs() < 1e-3 && (v[1] + 0.5).abs() < 1e-3 && (v[2] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn order_invariant() {
        let xs: Vec<f64> = (0..64).map(|i| ((i * 37 % 64) as f64 / 10.0).sin() * (1.0 + i as f64 / 50.0)).collect();
        let mut rev = xs.clone();
        rev.reverse();
        assert_eq!(fit_gennorm(&xs).unwrap(), fit_gennorm(&rev).unwrap());
    }
}
