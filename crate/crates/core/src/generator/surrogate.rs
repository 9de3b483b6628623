//! Desk-scale stand-in for a latent diffusion model.
//!
//! The noise predictor at step `t` is
//! `eps_t(x) = D_t ⊙ (H_{t,2} H_{t,1} H_{t,0} x) + 0.1 · B_t`, where each
//! `H = I - 2 v vᵀ` is a Householder reflection, `D_t` is diagonal with
//! entries in `[0.9, 1.1]` and `B_t` is an embedding-conditioned bias. All of
//! them come from the keystream keyed by `SHA3-256(m_json || e_digest)`, so
//! `L_m(e, ·)` is a deterministic, smooth map and its Lipschitz constant per
//! step is bounded by `max D_t ≤ 1.1`. The loop is the standard DDIM update
//! over `make_schedule(m.timesteps)`.

use crate::error::{PoaError, Result};
use crate::generator::ddim::{self, Schedule};
use crate::generator::{Embedding, Latent};
use crate::prf_seed::{self, MetaParams, Seed32};

const REFLECTIONS: u64 = 3;
const DIAG_DOMAIN: u64 = 1 << 62;
const BIAS_DOMAIN: u64 = 2 << 62;
const BIAS_SCALE: f64 = 0.1;

pub fn conditioning_key(m: &MetaParams, e_digest: &[u8; 32]) -> [u8; 32] {
    let mut bytes = m.canonical_json().into_bytes();
    bytes.extend_from_slice(e_digest);
    prf_seed::sha3_256(&bytes)
}

#[derive(Debug)]
struct StepConditioning {
    reflectors: Vec<Vec<f64>>,
    diag: Vec<f64>,
    bias: Vec<f64>,
}

/// `L_m(e, ·)` for one `(m, e)` pair, with all conditioning precomputed.
#[derive(Debug)]
pub struct Surrogate {
    shape: [usize; 3],
    schedule: Schedule,
    steps: Vec<StepConditioning>,
}

impl Surrogate {
    pub fn new(m: &MetaParams, e: &Embedding) -> Result<Self> {
        m.validate()?;
        let d = m.latent_len();
        let schedule = ddim::make_schedule(m.timesteps as usize)?;
        let key = Seed32(conditioning_key(m, &e.digest));
        let steps = (0..m.timesteps as u64)
            .map(|t| {
                let reflectors = (0..REFLECTIONS)
                    .map(|j| {
                        let sub = Seed32(prf_seed::expand_block(&key, t * REFLECTIONS + j));
                        let mut v = vec![0.0; d];
                        prf_seed::fill_gaussian(&sub, 0, &mut v);
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        v.iter_mut().for_each(|x| *x /= norm);
                        v
                    })
                    .collect();

                let mut diag = vec![0.0; d];
                prf_seed::fill_uniform(&prf_seed::sub_seed(&key, DIAG_DOMAIN, t), 0, &mut diag);
                diag.iter_mut().for_each(|u| *u = 0.9 + 0.2 * *u);

                let mut bias = vec![0.0; d];
                prf_seed::fill_gaussian(&prf_seed::sub_seed(&key, BIAS_DOMAIN, t), 0, &mut bias);
                for (i, b) in bias.iter_mut().enumerate() {
                    let cond = e.expanded[i % e.expanded.len()];
                    *b = BIAS_SCALE * (*b + cond) * std::f64::consts::FRAC_1_SQRT_2;
                }
                StepConditioning {
                    reflectors,
                    diag,
                    bias,
                }
            })
            .collect();
        Ok(Surrogate {
            shape: m.latent_shape,
            schedule,
            steps,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Writes `eps_t(x)` into `out`.
    pub fn predict_noise(&self, t: usize, x: &[f64], out: &mut [f64]) {
        let step = &self.steps[t];
        out.copy_from_slice(x);
        for v in &step.reflectors {
            let dot: f64 = v.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
            let k = 2.0 * dot;
            out.iter_mut().zip(v).for_each(|(o, vi)| *o -= k * vi);
        }
        for ((o, dg), b) in out.iter_mut().zip(&step.diag).zip(&step.bias) {
            *o = *o * dg + b;
        }
    }

    pub fn generate(&self, start: &Latent) -> Result<Latent> {
        if start.shape() != self.shape {
            return Err(PoaError::shape(&self.shape, &start.shape()));
        }
        self.generate_from(start.data().to_vec())
    }

    /// Runs the DDIM loop on a starting point given as a flat buffer.
    pub fn generate_from(&self, mut x: Vec<f64>) -> Result<Latent> {
        let d: usize = self.shape.iter().product();
        if x.len() != d {
            return Err(PoaError::shape(&self.shape, &[x.len()]));
        }
        let mut eps = vec![0.0; d];
        for t in (0..self.steps.len()).rev() {
            self.predict_noise(t, &x, &mut eps);
            let (alpha_t, alpha_prev) = self.schedule.step_alphas(t);
            ddim::step_in_place(&mut x, &eps, alpha_t, alpha_prev);
        }
        Latent::new(self.shape, x)
    }
}
