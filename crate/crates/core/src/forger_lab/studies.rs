//! Evaluation protocols run against the surrogate: goodness of fit,
//! distance preservation, sample-size table and distortion robustness.

use serde::{Deserialize, Serialize};

use crate::adjudicator::{self, AdjudicatorOptions, ClaimRequest, Contested};
use crate::error::Result;
use crate::generator::{ddim, Backend, Embedding, SurrogateBackend};
use crate::prf_seed::{self, Identity, Kappa, MetaParams, Seed32};
use crate::stats::{self, fit_gennorm};
use crate::transforms::{self, AffineParams};

const EMBEDDING_DOMAIN: u64 = 1 << 60;
const AUTHOR_DOMAIN: u64 = 3 << 60;
const PAIR_DOMAIN: u64 = 5 << 60;
const DISTORT_DOMAIN: u64 = 7 << 60;
const UNRELATED_DOMAIN: u64 = 9 << 60;

/// Fixed value range of the pixel quantizer.
pub const QUANT_RANGE: (f64, f64) = (-4.0, 4.0);

pub fn study_embedding(root: &Seed32, k: usize) -> [u8; 32] {
    Embedding::from_digest(prf_seed::sub_seed(root, EMBEDDING_DOMAIN, k as u64).0).digest
}

pub fn study_author(root: &Seed32) -> Identity {
    Identity {
        id_bytes: prf_seed::sub_seed(root, AUTHOR_DOMAIN, 0).0,
        label: "study-author".into(),
        registered_at: 0,
    }
}

fn study_kappa(root: &Seed32, m: &MetaParams, k: usize) -> Kappa {
    let r = prf_seed::sub_seed(root, AUTHOR_DOMAIN, 1 + k as u64).0[..16].try_into().unwrap();
    Kappa::new(m.clone(), study_embedding(root, k), r)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsStudy {
    pub embeddings: usize,
    pub n: usize,
    pub ks: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// For each embedding, fits the null scores `Sim(J, J_j)` of a fresh
/// original and records the KS distance of the fit.
pub fn ks_study(embeddings: usize, n: usize, m: &MetaParams, backend: &dyn Backend, root: &Seed32, options: &AdjudicatorOptions) -> Result<KsStudy> {
    let author = study_author(root);
    let mut ks = Vec::with_capacity(embeddings);
    for k in 0..embeddings {
        let kappa = study_kappa(root, m, k);
        let original = backend.generate(m, &kappa.e_digest, &prf_seed::derive_seed(&author, &kappa))?;
        let sample_root = prf_seed::sub_seed(root, PAIR_DOMAIN, k as u64);
        let scores = adjudicator::null_scores(backend, &kappa, &original, &sample_root, n, None, options.parallelism)?;
        let fitted = fit_gennorm(&scores)?;
        ks.push(stats::ks_distance(&scores, &fitted)?);
    }
    let (mean, sd) = mean_sd(&ks);
    Ok(KsStudy {
        embeddings,
        n,
        ks,
        mean,
        sd,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStudy {
    pub embeddings: usize,
    pub pairs: usize,
    pub alpha_bar_final: f64,
    pub lower_bound: f64,
    /// `‖L - L'‖ / ‖s - s'‖`, embedding-major.
    pub ratios: Vec<f64>,
    pub embedding_means: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram { edges, counts }
    }
}

/// Distance preservation between starting points and denoised latents,
/// against the bound `f(ᾱ_T) = (1 - sqrt(1 - ᾱ_T)) / sqrt(ᾱ_T)`.
pub fn distance_study(embeddings: usize, pairs: usize, m: &MetaParams, backend: &SurrogateBackend, root: &Seed32) -> Result<DistanceStudy> {
    let alpha_bar_final = ddim::make_schedule(m.timesteps as usize)?.final_alpha_bar();
    let mut ratios = Vec::with_capacity(embeddings * pairs);
    let mut embedding_means = Vec::with_capacity(embeddings);
    for k in 0..embeddings {
        let e = study_embedding(root, k);
        let surrogate = backend.surrogate(m, &e)?;
        let mut acc = 0.0;
        for p in 0..pairs {
            let idx = (k * pairs + p) as u64 * 2;
            let s = crate::generator::starting_point(&prf_seed::sub_seed(root, PAIR_DOMAIN, idx), m.latent_shape);
            let s2 = crate::generator::starting_point(&prf_seed::sub_seed(root, PAIR_DOMAIN, idx + 1), m.latent_shape);
            let l = surrogate.generate(&s)?;
            let l2 = surrogate.generate(&s2)?;
            let ratio = l.l2_distance(&l2)? / s.l2_distance(&s2)?;
            acc += ratio;
            ratios.push(ratio);
        }
        embedding_means.push(acc / pairs as f64);
    }
    let (mean, sd) = mean_sd(&ratios);
    Ok(DistanceStudy {
        embeddings,
        pairs,
        alpha_bar_final,
        lower_bound: ddim::distance_factor(alpha_bar_final),
        histogram: Histogram::new(&ratios, 20),
        ratios,
        embedding_means,
        mean,
        sd,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub alpha_log2: i32,
    pub delta: f64,
    pub n: usize,
    pub n_log2: f64,
}

pub fn table1(delta: f64) -> Result<Vec<Table1Row>> {
    [-10, -30, -50]
        .into_iter()
        .map(|a| {
            let n = stats::required_samples(2f64.powi(a), delta)?;
            Ok(Table1Row {
                alpha_log2: a,
                delta,
                n,
                n_log2: (n as f64).log2(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Distortion {
    Clean,
    /// Pixel-domain Gaussian noise of the given variance.
    Gauss { sigma2: f64 },
    /// Uniform quantization over [`QUANT_RANGE`].
    Quantize { levels: u32 },
    /// Random affine map; the claimant supplies its inverse as `t`.
    Affine,
}

impl Distortion {
    pub fn label(&self) -> String {
        match self {
            Distortion::Clean => "none".into(),
            Distortion::Gauss { sigma2 } => format!("gauss(sigma2={sigma2})"),
            Distortion::Quantize { levels } => format!("quantize(levels={levels})"),
            Distortion::Affine => "affine".into(),
        }
    }

    pub fn standard_set() -> Vec<Distortion> {
        vec![
            Distortion::Clean,
            Distortion::Gauss { sigma2: 1.0 },
            Distortion::Gauss { sigma2: 3.0 },
            Distortion::Gauss { sigma2: 9.0 },
            Distortion::Quantize { levels: 64 },
            Distortion::Quantize { levels: 32 },
            Distortion::Quantize { levels: 8 },
            Distortion::Affine,
        ]
    }

    /// The contested object and the claimant's alignment transform.
    pub fn apply(&self, backend: &dyn Backend, original: &crate::generator::Latent, seed: &Seed32) -> Result<(Contested, Option<AffineParams>)> {
        Ok(match *self {
            Distortion::Clean => (Contested::Latent(original.clone()), None),
            Distortion::Gauss { sigma2 } => (
                Contested::Image(transforms::add_gaussian_noise(&backend.decode(original)?, sigma2, seed)?),
                None,
            ),
            Distortion::Quantize { levels } => (
                Contested::Image(transforms::quantize(&backend.decode(original)?, levels, QUANT_RANGE.0, QUANT_RANGE.1)?),
                None,
            ),
            Distortion::Affine => {
                let a = transforms::sample_affine(seed);
                let warped = transforms::affine_warp(&backend.decode(original)?, &a)?;
                (Contested::Image(warped), Some(transforms::invert_affine(&a)?))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub distortion: String,
    pub p_r_log2: i32,
    pub claims: usize,
    pub false_rejects: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnrelatedRow {
    pub p_r_log2: i32,
    pub claims: usize,
    pub false_accepts: usize,
    pub min_q_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2 {
    pub embeddings: usize,
    pub delta: f64,
    pub rows: Vec<Table2Row>,
    pub unrelated: Vec<UnrelatedRow>,
}

#[derive(Clone, Debug)]
pub struct Table2Config {
    pub embeddings: usize,
    pub p_r_log2: Vec<i32>,
    pub delta: f64,
    pub distortions: Vec<Distortion>,
    pub m: MetaParams,
}

/// Genuine claims on distorted originals (false-reject rates) and claims on
/// unrelated latents (false accepts), with `alpha = p_r / 2` per level.
pub fn table2(config: &Table2Config, backend: &dyn Backend, root: &Seed32, options: &AdjudicatorOptions) -> Result<Table2> {
    let author = study_author(root);
    let selector = backend.selector();
    let levels = &config.p_r_log2;
    let mut rejects = vec![vec![0usize; levels.len()]; config.distortions.len()];
    let mut accepts = vec![0usize; levels.len()];
    let mut min_q = vec![f64::INFINITY; levels.len()];
    let claim = |contested: Contested, kappa: &Kappa, t: Option<AffineParams>, p_r: f64| -> Result<(bool, f64)> {
        let request = ClaimRequest {
            contested,
            identity: author.clone(),
            kappa: kappa.clone(),
            alpha: p_r / 2.0,
            delta: config.delta,
            transform: t,
            backend: selector.clone(),
        };
        let report = adjudicator::adjudicate(&request, backend, options)?;
        Ok((adjudicator::judge(&report, p_r)?.accept, report.q_hat))
    };
    for k in 0..config.embeddings {
        let kappa = study_kappa(root, &config.m, k);
        let original = backend.generate(&kappa.m, &kappa.e_digest, &prf_seed::derive_seed(&author, &kappa))?;
        let distort_seed = prf_seed::sub_seed(root, DISTORT_DOMAIN, k as u64);
        for (d, distortion) in config.distortions.iter().enumerate() {
            let (contested, t) = distortion.apply(backend, &original, &distort_seed)?;
            for (l, level) in levels.iter().enumerate() {
                let (accept, _) = claim(contested.clone(), &kappa, t, 2f64.powi(*level))?;
                if !accept {
                    rejects[d][l] += 1;
                }
            }
        }
        let unrelated_e = Embedding::from_digest(prf_seed::sub_seed(root, UNRELATED_DOMAIN, k as u64).0).digest;
        let unrelated = backend.generate(
            &kappa.m,
            &unrelated_e,
            &prf_seed::sub_seed(root, UNRELATED_DOMAIN, (k + config.embeddings) as u64),
        )?;
        for (l, level) in levels.iter().enumerate() {
            let (accept, q_hat) = claim(Contested::Latent(unrelated.clone()), &kappa, None, 2f64.powi(*level))?;
            if accept {
                accepts[l] += 1;
            }
            min_q[l] = min_q[l].min(q_hat);
        }
    }
    let mut rows = Vec::new();
    for (d, distortion) in config.distortions.iter().enumerate() {
        for (l, level) in levels.iter().enumerate() {
            rows.push(Table2Row {
                distortion: distortion.label(),
                p_r_log2: *level,
                claims: config.embeddings,
                false_rejects: rejects[d][l],
                rate: rejects[d][l] as f64 / config.embeddings as f64,
            });
        }
    }
    let unrelated = levels
        .iter()
        .enumerate()
        .map(|(l, level)| UnrelatedRow {
            p_r_log2: *level,
            claims: config.embeddings,
            false_accepts: accepts[l],
            min_q_hat: min_q[l],
        })
        .collect();
    Ok(Table2 {
        embeddings: config.embeddings,
        delta: config.delta,
        rows,
        unrelated,
    })
}
