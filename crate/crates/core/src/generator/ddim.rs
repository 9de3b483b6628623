//! Linear-beta DDIM schedule and the deterministic DDIM update.

use crate::error::{PoaError, Result};
use crate::generator::Latent;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// `alpha_prev` used for the last denoising step; the schedule's implicit
/// `alpha_bar = 1` sits outside the open interval `ddim_step` accepts.
pub const FINAL_ALPHA: f64 = 1.0 - 1e-12;

/// Cumulative products `alphas_bar[t] = prod_{k <= t} (1 - beta_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    alphas_bar: Vec<f64>,
}

impl Schedule {
    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn len(&self) -> usize {
        self.alphas_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas_bar.is_empty()
    }

    /// `alpha_bar` at the noisiest step.
    pub fn final_alpha_bar(&self) -> f64 {
        *self.alphas_bar.last().expect("schedule has at least one step")
    }

    /// `(alpha_t, alpha_prev)` for denoising step `t`.
    pub fn step_alphas(&self, t: usize) -> (f64, f64) {
        let prev = if t == 0 { FINAL_ALPHA } else { self.alphas_bar[t - 1] };
        (self.alphas_bar[t], prev)
    }
}

pub fn betas(timesteps: usize) -> Vec<f64> {
    if timesteps == 1 {
        return vec![BETA_START];
    }
    let span = (timesteps - 1) as f64;
    (0..timesteps)
        .map(|k| BETA_START + (BETA_END - BETA_START) * k as f64 / span)
        .collect()
}

pub fn make_schedule(timesteps: usize) -> Result<Schedule> {
    if timesteps == 0 {
        return Err(PoaError::DomainError("timesteps must be at least 1".into()));
    }
    let mut acc = 1.0;
    let alphas_bar = betas(timesteps)
        .into_iter()
        .map(|b| {
            acc *= 1.0 - b;
            acc
        })
        .collect();
    Ok(Schedule { alphas_bar })
}

fn check_alphas(alpha_t: f64, alpha_prev: f64) -> Result<()> {
    let open = |a: f64| a > 0.0 && a < 1.0;
    if !open(alpha_t) || !open(alpha_prev) || alpha_prev < alpha_t {
        return Err(PoaError::InvalidAlpha { alpha_t, alpha_prev });
    }
    Ok(())
}

/// `sqrt(alpha_prev) * x0_pred + sqrt(1 - alpha_prev) * eps`, where
/// `x0_pred = (x_t - sqrt(1 - alpha_t) * eps) / sqrt(alpha_t)`.
pub fn ddim_step(x_t: &Latent, eps: &Latent, alpha_t: f64, alpha_prev: f64) -> Result<Latent> {
    if x_t.shape() != eps.shape() {
        return Err(PoaError::shape(&x_t.shape(), &eps.shape()));
    }
    check_alphas(alpha_t, alpha_prev)?;
    let mut out = x_t.clone();
    step_in_place(out.data_mut(), eps.data(), alpha_t, alpha_prev);
    Ok(out)
}

/// Unchecked in-place form of [`ddim_step`] used by the sampling loop.
pub(crate) fn step_in_place(x: &mut [f64], eps: &[f64], alpha_t: f64, alpha_prev: f64) {
    let sa_t = alpha_t.sqrt();
    let sb_t = (1.0 - alpha_t).sqrt();
    let sa_p = alpha_prev.sqrt();
    let sb_p = (1.0 - alpha_prev).sqrt();
    for (xi, &ei) in x.iter_mut().zip(eps) {
        let x0 = (*xi - sb_t * ei) / sa_t;
        *xi = sa_p * x0 + sb_p * ei;
    }
}

/// Lower bound factor `(1 - sqrt(1 - a)) / sqrt(a)` relating starting-point
/// distances to denoised-latent distances.
pub fn distance_factor(alpha: f64) -> f64 {
    (1.0 - (1.0 - alpha).sqrt()) / alpha.sqrt()
}
