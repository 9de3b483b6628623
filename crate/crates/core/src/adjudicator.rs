//! The probabilistic adjudicator and the judge's acceptance rule.
//!
//! All randomness comes from the PA seed, a SHA3-256 digest of the
//! canonicalized request. Sample `j` starts from `G(sub_seed(pa_seed,
//! SAMPLE_DOMAIN, j))`, so scores can be computed in any order or in parallel
//! and are aggregated by index.

use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use crate::error::{PoaError, Result};
use crate::generator::{Backend, Image, Latent};
use crate::prf_seed::{self, Identity, Kappa, Seed32};
use crate::stats::{self, GenNormParams};
use crate::transforms::{self, AffineParams};

pub const PA_MAGIC: &[u8] = b"POA-PA/1";
pub const SAMPLE_DOMAIN: u64 = 3 << 62;
pub const TOOL: &str = concat!("poa-core ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq)]
pub enum Contested {
    Latent(Latent),
    Image(Image),
}

impl Contested {
    fn kind(&self) -> (u8, &'static str) {
        match self {
            Contested::Latent(_) => (0, "latent"),
            Contested::Image(_) => (1, "image"),
        }
    }

    fn shape(&self) -> [usize; 3] {
        match self {
            Contested::Latent(l) => l.shape(),
            Contested::Image(i) => i.shape(),
        }
    }

    fn digest(&self) -> [u8; 32] {
        match self {
            Contested::Latent(l) => l.digest(),
            Contested::Image(i) => i.digest(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClaimRequest {
    pub contested: Contested,
    pub identity: Identity,
    pub kappa: Kappa,
    pub alpha: f64,
    pub delta: f64,
    /// Alignment transform supplied by the claimant; `None` is the identity.
    pub transform: Option<AffineParams>,
    /// Selector of the backend that must serve the request.
    pub backend: String,
}

impl ClaimRequest {
    pub fn validate(&self) -> Result<()> {
        stats::required_samples(self.alpha, self.delta)?;
        if let Some(t) = &self.transform {
            t.validate()?;
        }
        self.kappa.m.validate()
    }

    fn effective_transform(&self) -> Option<&AffineParams> {
        self.transform.as_ref().filter(|t| !t.is_identity())
    }
}

/// SHA3-256 over
/// `"POA-PA/1" || kind || LE32 ndim || LE32 dims || digest(contested) ||
/// id_bytes || LE32 len || kappa bytes || alpha || delta || LE32 len ||
/// transform JSON || LE32 len || backend selector`, floats as f64 LE.
pub fn derive_pa_seed(request: &ClaimRequest) -> Seed32 {
    let mut bytes = PA_MAGIC.to_vec();
    let push_block = |bytes: &mut Vec<u8>, block: &[u8]| {
        bytes.extend_from_slice(&(block.len() as u32).to_le_bytes());
        bytes.extend_from_slice(block);
    };
    bytes.push(request.contested.kind().0);
    let shape = request.contested.shape();
    bytes.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in shape {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&request.contested.digest());
    bytes.extend_from_slice(&request.identity.id_bytes);
    push_block(&mut bytes, &prf_seed::canonical_kappa_bytes(&request.kappa));
    bytes.extend_from_slice(&request.alpha.to_le_bytes());
    bytes.extend_from_slice(&request.delta.to_le_bytes());
    let transform = match &request.transform {
        Some(t) => prf_seed::canonical_json(&serde_json::to_value(t).expect("affine params serialize")),
        None => "null".to_string(),
    };
    push_block(&mut bytes, transform.as_bytes());
    push_block(&mut bytes, request.backend.as_bytes());
    Seed32(prf_seed::sha3_256(&bytes))
}

pub fn sample_seed(pa_seed: &Seed32, index: u64) -> Seed32 {
    prf_seed::sub_seed(pa_seed, SAMPLE_DOMAIN, index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestEcho {
    pub contested_kind: String,
    pub contested_shape: [usize; 3],
    pub contested_digest: String,
    pub identity_id_hex: String,
    pub identity_label: String,
    pub kappa: Kappa,
    pub alpha: f64,
    pub delta: f64,
    pub transform: Option<AffineParams>,
    pub backend: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationReport {
    pub tool: String,
    pub request: RequestEcho,
    pub pa_seed: Seed32,
    pub original_digest: String,
    /// How `t` was applied to the contested and comparison objects.
    pub composition: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_score: f64,
    pub fitted: GenNormParams,
    pub q_hat: f64,
    pub q_hat_log2: f64,
    pub interval: [f64; 2],
    pub q_upper_log2: f64,
    pub ks: f64,
}

impl AdjudicationReport {
    /// Sorted-key JSON; byte-identical for identical requests.
    pub fn to_canonical_json(&self) -> String {
        prf_seed::canonical_json(&serde_json::to_value(self).expect("report serializes"))
    }

    pub fn alpha(&self) -> f64 {
        self.request.alpha
    }
}

/// Report plus the intermediate values the lab studies reuse.
#[derive(Clone, Debug)]
pub struct Adjudication {
    pub report: AdjudicationReport,
    pub original: Latent,
    pub contested_latent: Latent,
    pub scores: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdjudicatorOptions {
    pub parallelism: NonZeroUsize,
}

impl Default for AdjudicatorOptions {
    fn default() -> Self {
        AdjudicatorOptions {
            parallelism: std::thread::available_parallelism().unwrap_or(NonZeroUsize::MIN),
        }
    }
}

/// `t` on a latent: decode, warp in pixel space, encode.
pub fn transform_latent(backend: &dyn Backend, latent: &Latent, t: Option<&AffineParams>) -> Result<Latent> {
    match t {
        None => Ok(latent.clone()),
        Some(t) => {
            let image = transforms::affine_warp(&backend.decode(latent)?, t)?;
            backend.encode(&image, latent.shape())
        }
    }
}

/// Scores `Sim(J, t(J_j))` for `j` in `0..n`, computed with up to
/// `parallelism` threads and returned in index order.
pub fn null_scores(
    backend: &dyn Backend,
    kappa: &Kappa,
    original: &Latent,
    pa_seed: &Seed32,
    n: usize,
    t: Option<&AffineParams>,
    parallelism: NonZeroUsize,
) -> Result<Vec<f64>> {
    let score = |j: usize| -> Result<f64> {
        let latent = backend.generate(&kappa.m, &kappa.e_digest, &sample_seed(pa_seed, j as u64))?;
        stats::similarity(original, &transform_latent(backend, &latent, t)?)
    };
    let workers = parallelism.get().min(n.max(1));
    if workers == 1 {
        return (0..n).map(score).collect();
    }
    let mut scores = vec![0.0; n];
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = scores
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, out)| {
                let score = &score;
                scope.spawn(move || -> Result<()> {
                    for (k, slot) in out.iter_mut().enumerate() {
                        *slot = score(c * chunk + k)?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("scoring thread panicked"))
    })?;
    Ok(scores)
}

fn fit_with_diagnostics(scores: &[f64]) -> Result<GenNormParams> {
    stats::fit_gennorm(scores).map_err(|source| {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let sd = (scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        PoaError::FitError {
            samples: scores.len(),
            mean,
            sd,
            source: Box::new(source),
        }
    })
}

/// `ln(e^a + e^b)`.
fn ln_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn adjudicate(request: &ClaimRequest, backend: &dyn Backend, options: &AdjudicatorOptions) -> Result<AdjudicationReport> {
    Ok(run(request, backend, options)?.report)
}

pub fn run(request: &ClaimRequest, backend: &dyn Backend, options: &AdjudicatorOptions) -> Result<Adjudication> {
    request.validate()?;
    if backend.selector() != request.backend {
        return Err(PoaError::BackendError(format!(
            "request names backend {}, got {}",
            request.backend,
            backend.selector()
        )));
    }
    let m = &request.kappa.m;
    let t = request.effective_transform();

    // Step 0: sample size and the regenerated original.
    let n = stats::required_samples(request.alpha, request.delta)?;
    let seed = prf_seed::derive_seed(&request.identity, &request.kappa);
    let original = backend.generate(m, &request.kappa.e_digest, &seed)?;

    let (contested_latent, aligned, composition) = match &request.contested {
        Contested::Latent(l) => {
            if l.shape() != m.latent_shape {
                return Err(PoaError::shape(&m.latent_shape, &l.shape()));
            }
            let aligned = transform_latent(backend, l, t)?;
            let how = if t.is_some() { "encode(warp(decode(I), t))" } else { "I" };
            (l.clone(), aligned, how)
        }
        Contested::Image(img) => {
            let encoded = backend.encode(img, m.latent_shape)?;
            let aligned = match t {
                Some(t) => backend.encode(&transforms::affine_warp(img, t)?, m.latent_shape)?,
                None => encoded.clone(),
            };
            let how = if t.is_some() { "encode(warp(I, t))" } else { "encode(I)" };
            (encoded, aligned, how)
        }
    };
    let composition = match t {
        Some(_) => format!("T = Sim(J, {composition}); samples Sim(J, encode(warp(decode(J_j), t)))"),
        None => format!("T = Sim(J, {composition}); samples Sim(J, J_j)"),
    };

    // Step 1: null scores and the fitted distribution.
    let pa_seed = derive_pa_seed(request);
    let scores = null_scores(backend, &request.kappa, &original, &pa_seed, n, t, options.parallelism)?;
    let fitted = fit_with_diagnostics(&scores)?;

    // Step 2: tail estimate at the observed score.
    let t_score = stats::similarity(&original, &aligned)?;
    let ln_q = fitted.ln_tail(t_score)?;
    let q_hat = ln_q.exp();
    let ks = stats::ks_distance(&scores, &fitted)?;

    let alpha = request.alpha;
    let report = AdjudicationReport {
        tool: TOOL.to_string(),
        request: RequestEcho {
            contested_kind: request.contested.kind().1.to_string(),
            contested_shape: request.contested.shape(),
            contested_digest: hex::encode(request.contested.digest()),
            identity_id_hex: request.identity.id_hex(),
            identity_label: request.identity.label.clone(),
            kappa: request.kappa.clone(),
            alpha,
            delta: request.delta,
            transform: request.transform,
            backend: request.backend.clone(),
        },
        pa_seed,
        original_digest: hex::encode(original.digest()),
        composition,
        n,
        t_score,
        fitted,
        q_hat,
        q_hat_log2: ln_q / std::f64::consts::LN_2,
        interval: [q_hat - alpha, q_hat + alpha],
        q_upper_log2: ln_add(ln_q, alpha.ln()) / std::f64::consts::LN_2,
        ks,
    };
    Ok(Adjudication {
        report,
        original,
        contested_latent,
        scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub accept: bool,
    pub p_r: f64,
    pub q_upper: f64,
    pub rationale: String,
}

/// Accepts iff `q_hat + alpha <= p_r`.
pub fn judge(report: &AdjudicationReport, p_r: f64) -> Result<JudgeVerdict> {
    if !(p_r > 0.0 && p_r < 1.0) {
        return Err(PoaError::DomainError(format!("p_r = {p_r} outside (0, 1)")));
    }
    let alpha = report.alpha();
    let [lo, hi] = report.interval;
    let width_err = ((hi - lo) - 2.0 * alpha).abs();
    if !(width_err <= 1e-12 * (report.q_hat.abs() + alpha)) {
        return Err(PoaError::InconsistentReport(format!(
            "interval [{lo}, {hi}] is not q_hat ± {alpha}"
        )));
    }
    let expected_n = stats::required_samples(alpha, report.request.delta)?;
    if report.n != expected_n {
        return Err(PoaError::InconsistentReport(format!(
            "n = {} but alpha and delta require {expected_n}",
            report.n
        )));
    }
    if !(0.0..=1.0).contains(&report.q_hat) {
        return Err(PoaError::InconsistentReport(format!("q_hat = {} outside [0, 1]", report.q_hat)));
    }
    let q_upper = report.q_hat + alpha;
    let accept = q_upper <= p_r;
    let mut rationale = format!(
        "{}: q_upper = {:.6e} (2^{:.2}) {} p_r = {:.6e} (2^{:.2}); n = {}, KS = {:.4}",
        if accept { "accept" } else { "reject" },
        q_upper,
        report.q_upper_log2,
        if accept { "<=" } else { ">" },
        p_r,
        p_r.log2(),
        report.n,
        report.ks
    );
    if alpha != p_r / 2.0 {
        rationale.push_str(&format!("; warning: alpha = {alpha:e} differs from p_r/2 = {:e}", p_r / 2.0));
    }
    Ok(JudgeVerdict {
        accept,
        p_r,
        q_upper,
        rationale,
    })
}
