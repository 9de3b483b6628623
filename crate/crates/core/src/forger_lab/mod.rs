//! Experiments on forgers: random-forger success rates, the forger
//! advantage, the PRF indistinguishability game and the A2 detector.

pub mod studies;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PoaError, Result};
use crate::generator::{Backend, Latent, SurrogateBackend};
use crate::prf_seed::{self, Identity, Kappa, MetaParams, Seed32};
use crate::stats::{self, GenNormParams};

const TRIAL_DOMAIN: u64 = 1 << 61;
const FORGER_DOMAIN: u64 = 3 << 61;
const RANDOM_DOMAIN: u64 = 5 << 61;

/// The PRF `f_i`. The insecure variants exist only for contrast experiments
/// and can only be obtained through [`PrfFamily::insecure`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrfFamily(Prf);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Prf {
    HmacSha3,
    Insecure(InsecurePrf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InsecurePrf {
    /// `key XOR message[..32]`: invertible, and blind to everything past
    /// the first 32 message bytes.
    XorPrefix,
    /// The last 32 message bytes; ignores the key.
    TruncatedTail,
}

impl PrfFamily {
    pub const HMAC_SHA3: PrfFamily = PrfFamily(Prf::HmacSha3);

    /// A deliberately broken PRF. Never use outside experiments.
    pub fn insecure(kind: InsecurePrf) -> Self {
        PrfFamily(Prf::Insecure(kind))
    }

    pub fn is_insecure(&self) -> bool {
        matches!(self.0, Prf::Insecure(_))
    }

    pub fn name(&self) -> &'static str {
        match self.0 {
            Prf::HmacSha3 => prf_seed::PRF_NAME,
            Prf::Insecure(InsecurePrf::XorPrefix) => "INSECURE-xor-prefix",
            Prf::Insecure(InsecurePrf::TruncatedTail) => "INSECURE-truncated-tail",
        }
    }

    pub fn eval(&self, key: &[u8; 32], message: &[u8]) -> [u8; 32] {
        match self.0 {
            Prf::HmacSha3 => prf_seed::hmac_sha3_256(key, message),
            Prf::Insecure(InsecurePrf::XorPrefix) => {
                let mut out = *key;
                for (o, m) in out.iter_mut().zip(message) {
                    *o ^= m;
                }
                out
            }
            Prf::Insecure(InsecurePrf::TruncatedTail) => {
                let mut out = [0u8; 32];
                let tail = &message[message.len().saturating_sub(32)..];
                out[32 - tail.len()..].copy_from_slice(tail);
                out
            }
        }
    }

    pub fn derive_seed(&self, identity: &Identity, kappa: &Kappa) -> Seed32 {
        Seed32(self.eval(&identity.id_bytes, &prf_seed::canonical_kappa_bytes(kappa)))
    }
}

fn r_from(seed: &Seed32) -> [u8; 16] {
    seed.0[..16].try_into().unwrap()
}

fn with_r(kappa: &Kappa, r: [u8; 16]) -> Kappa {
    Kappa { r, ..kappa.clone() }
}

/// Binomial proportion with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub stderr: f64,
}

impl RateEstimate {
    pub fn new(successes: usize, trials: usize) -> Self {
        let rate = successes as f64 / trials as f64;
        RateEstimate {
            trials,
            successes,
            rate,
            stderr: (rate * (1.0 - rate) / trials as f64).sqrt(),
        }
    }
}

/// Fraction of fresh `r'` for which the forger's own generation under
/// `(m, e)` reaches `threshold` against `contested`.
#[allow(clippy::too_many_arguments)]
pub fn random_forger_success(
    contested: &Latent,
    kappa: &Kappa,
    forger: &Identity,
    threshold: f64,
    trials: usize,
    backend: &dyn Backend,
    root: &Seed32,
) -> Result<RateEstimate> {
    if trials == 0 {
        return Err(PoaError::DomainError("trials must be at least 1".into()));
    }
    let mut successes = 0;
    for i in 0..trials {
        let r = r_from(&prf_seed::sub_seed(root, RANDOM_DOMAIN, i as u64));
        let forged = with_r(kappa, r);
        let latent = backend.generate(&forged.m, &forged.e_digest, &prf_seed::derive_seed(forger, &forged))?;
        if stats::similarity(contested, &latent)? >= threshold {
            successes += 1;
        }
    }
    Ok(RateEstimate::new(successes, trials))
}

/// A forger `φ(I, κ) -> κ̃`.
pub trait ForgerStrategy: Send + Sync {
    fn name(&self) -> String;

    fn propose(&self, contested: &Latent, kappa: &Kappa, forger: &Identity, trial_seed: &Seed32) -> Kappa;
}

/// Replays the author's `κ` verbatim under the forger's identity.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReplayKappa;

impl ForgerStrategy for ReplayKappa {
    fn name(&self) -> String {
        "replay".into()
    }

    fn propose(&self, _: &Latent, kappa: &Kappa, _: &Identity, _: &Seed32) -> Kappa {
        kappa.clone()
    }
}

/// Keeps `(m, e)` and draws fresh free bits.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomGuess;

impl ForgerStrategy for RandomGuess {
    fn name(&self) -> String {
        "random-guess".into()
    }

    fn propose(&self, _: &Latent, kappa: &Kappa, _: &Identity, trial_seed: &Seed32) -> Kappa {
        with_r(kappa, r_from(trial_seed))
    }
}

/// Replays `r` and `m` but swaps in another embedding.
#[derive(Clone, Debug)]
pub struct SwapEmbedding {
    pub e_digest: [u8; 32],
}

impl ForgerStrategy for SwapEmbedding {
    fn name(&self) -> String {
        format!("swap-embedding({})", &hex::encode(self.e_digest)[..12])
    }

    fn propose(&self, _: &Latent, kappa: &Kappa, _: &Identity, _: &Seed32) -> Kappa {
        Kappa {
            e_digest: self.e_digest,
            e_ref: None,
            ..kappa.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEstimate {
    pub strategy: String,
    pub prf: String,
    pub trials: usize,
    pub successes: usize,
    pub advantage: f64,
    pub stderr: f64,
}

/// Monte-Carlo estimate of `P[S_j(r̃) - S_i(r') > 0] - 1/2`.
///
/// Each trial draws fresh author free bits from `kappa_template`, generates
/// the contested `I`, lets the strategy forge `κ̃` and compares the forged
/// score with the score of a uniformly drawn `r'` under the author's `(m, e)`.
/// Every generation goes through `prf`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_advantage(
    strategy: &dyn ForgerStrategy,
    author: &Identity,
    kappa_template: &Kappa,
    forger: &Identity,
    trials: usize,
    backend: &dyn Backend,
    prf: PrfFamily,
    root: &Seed32,
) -> Result<AdvantageEstimate> {
    if trials < 100 {
        return Err(PoaError::DomainError(format!("need at least 100 trials, got {trials}")));
    }
    let generate = |identity: &Identity, k: &Kappa| backend.generate(&k.m, &k.e_digest, &prf.derive_seed(identity, k));
    let mut successes = 0;
    for i in 0..trials {
        let trial = prf_seed::sub_seed(root, TRIAL_DOMAIN, i as u64);
        let kappa = with_r(kappa_template, r_from(&prf_seed::sub_seed(&trial, TRIAL_DOMAIN, 0)));
        let contested = generate(author, &kappa)?;
        let forged = strategy.propose(&contested, &kappa, forger, &prf_seed::sub_seed(&trial, FORGER_DOMAIN, 0));
        let forged_score = stats::similarity(&generate(forger, &forged)?, &contested)?;
        let random = with_r(&kappa, r_from(&prf_seed::sub_seed(&trial, RANDOM_DOMAIN, 0)));
        let random_score = stats::similarity(&generate(author, &random)?, &contested)?;
        if forged_score - random_score > 0.0 {
            successes += 1;
        }
    }
    let rate = RateEstimate::new(successes, trials);
    Ok(AdvantageEstimate {
        strategy: strategy.name(),
        prf: prf.name().into(),
        trials,
        successes,
        advantage: rate.rate - 0.5,
        stderr: rate.stderr,
    })
}

/// What the game's adversary sees: `(i, m, e, r)` with `i` by label only;
/// the PRF is reachable solely through the challenger's oracle.
#[derive(Clone, Debug)]
pub struct PublicView {
    pub identity_label: String,
    pub m: MetaParams,
    pub e_digest: [u8; 32],
    pub r: [u8; 16],
}

impl PublicView {
    pub fn kappa(&self) -> Kappa {
        Kappa::new(self.m.clone(), self.e_digest, self.r)
    }
}

/// Oracle access to `f_i`, refusing the challenge input.
pub struct Oracle<'a> {
    prf: PrfFamily,
    key: &'a [u8; 32],
    forbidden: &'a [u8],
    queries: usize,
}

impl Oracle<'_> {
    pub fn query(&mut self, kappa: &Kappa) -> Result<[u8; 32]> {
        self.query_bytes(&prf_seed::canonical_kappa_bytes(kappa))
    }

    pub fn query_bytes(&mut self, message: &[u8]) -> Result<[u8; 32]> {
        if message == self.forbidden {
            return Err(PoaError::IllegalQuery);
        }
        self.queries += 1;
        Ok(self.prf.eval(self.key, message))
    }

    pub fn queries(&self) -> usize {
        self.queries
    }
}

pub trait Distinguisher {
    fn name(&self) -> String;

    /// Returns the guess `σ̂`.
    fn guess(&mut self, view: &PublicView, oracle: &mut Oracle<'_>, challenge: &[u8; 32]) -> Result<bool>;
}

/// Always answers 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrivialDistinguisher;

impl Distinguisher for TrivialDistinguisher {
    fn name(&self) -> String {
        "trivial".into()
    }

    fn guess(&mut self, _: &PublicView, _: &mut Oracle<'_>, _: &[u8; 32]) -> Result<bool> {
        Ok(false)
    }
}

/// Guesses "PRF output" when the challenge's popcount exceeds the running
/// median of popcounts seen in oracle answers.
#[derive(Clone, Debug, Default)]
pub struct BitFrequencyDistinguisher {
    counter: u64,
}

impl Distinguisher for BitFrequencyDistinguisher {
    fn name(&self) -> String {
        "bit-frequency".into()
    }

    fn guess(&mut self, view: &PublicView, oracle: &mut Oracle<'_>, challenge: &[u8; 32]) -> Result<bool> {
        let mut ones = 0u32;
        for k in 0..8u64 {
            self.counter += 1;
            let mut probe = view.kappa();
            probe.r[..8].copy_from_slice(&self.counter.to_le_bytes());
            probe.r[8..].copy_from_slice(&k.to_le_bytes());
            if probe.r == view.r {
                continue;
            }
            ones += oracle.query(&probe)?.iter().map(|b| b.count_ones()).sum::<u32>();
        }
        let challenge_ones: u32 = challenge.iter().map(|b| b.count_ones()).sum();
        Ok(challenge_ones * 8 > ones)
    }
}

/// Queries a sibling input (last bit of `r` flipped) and answers "PRF
/// output" iff the oracle's answer equals the challenge.
#[derive(Clone, Copy, Debug, Default)]
pub struct RecomputeDistinguisher;

impl Distinguisher for RecomputeDistinguisher {
    fn name(&self) -> String {
        "recompute".into()
    }

    fn guess(&mut self, view: &PublicView, oracle: &mut Oracle<'_>, challenge: &[u8; 32]) -> Result<bool> {
        let mut sibling = view.kappa();
        sibling.r[15] ^= 1;
        Ok(oracle.query(&sibling)? == *challenge)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub round: usize,
    pub sigma: bool,
    pub challenge: [u8; 32],
    /// `f_i(⟨m, e, r⟩)`, recorded for audits only.
    pub prf_output: [u8; 32],
    pub guess: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameTranscript {
    pub distinguisher: String,
    pub prf: String,
    pub rounds: usize,
    pub wins: usize,
    pub advantage: f64,
    pub stderr: f64,
}

/// Challenger for the chosen-input PRF indistinguishability game with fixed
/// `(i, m, e)` and fresh `r`, coin and random string each round.
#[allow(clippy::too_many_arguments)]
pub fn play_prf_game(
    distinguisher: &mut dyn Distinguisher,
    prf: PrfFamily,
    identity: &Identity,
    m: &MetaParams,
    e_digest: &[u8; 32],
    rounds: usize,
    root: &Seed32,
    mut audit: Option<&mut dyn FnMut(&RoundRecord)>,
) -> Result<GameTranscript> {
    if rounds < 100 {
        return Err(PoaError::DomainError(format!("need at least 100 rounds, got {rounds}")));
    }
    let mut rng = ChaCha20Rng::from_seed(root.0);
    let mut wins = 0;
    for round in 0..rounds {
        let mut r = [0u8; 16];
        rng.fill_bytes(&mut r);
        let view = PublicView {
            identity_label: identity.label.clone(),
            m: m.clone(),
            e_digest: *e_digest,
            r,
        };
        let message = prf_seed::canonical_kappa_bytes(&view.kappa());
        let b1 = prf.eval(&identity.id_bytes, &message);
        let mut b0 = [0u8; 32];
        rng.fill_bytes(&mut b0);
        let sigma: bool = rng.gen();
        let challenge = if sigma { b1 } else { b0 };
        let mut oracle = Oracle {
            prf,
            key: &identity.id_bytes,
            forbidden: &message,
            queries: 0,
        };
        let guess = distinguisher.guess(&view, &mut oracle, &challenge)?;
        if guess == sigma {
            wins += 1;
        }
        if let Some(hook) = audit.as_mut() {
            hook(&RoundRecord {
                round,
                sigma,
                challenge,
                prf_output: b1,
                guess,
            });
        }
    }
    let rate = RateEstimate::new(wins, rounds);
    Ok(GameTranscript {
        distinguisher: distinguisher.name(),
        prf: prf.name().into(),
        rounds,
        wins,
        advantage: rate.rate - 0.5,
        stderr: rate.stderr,
    })
}

pub const A2_TAIL_LOG2: i32 = -8;
pub const A2_EXCEEDANCE_FACTOR: f64 = 10.0;
pub const A2_KS_LIMIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum A2Status {
    Ok,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2Report {
    pub status: A2Status,
    pub n: usize,
    pub threshold: f64,
    pub exceedances: usize,
    pub expected: f64,
    pub ks: f64,
}

/// Flags scores whose upper tail is far heavier than the fitted
/// distribution allows: more than 10× the expected count above the fitted
/// `1 - 2^-8` quantile, or a KS distance above 0.1.
pub fn detect_a2_violation(scores: &[f64], fitted: &GenNormParams) -> Result<A2Report> {
    let minimum = stats::required_samples(2f64.powi(-10), 1e-3)?;
    if scores.len() < minimum {
        return Err(PoaError::DomainError(format!(
            "need at least {minimum} scores, got {}",
            scores.len()
        )));
    }
    let threshold = fitted.quantile_ln_tail(A2_TAIL_LOG2 as f64 * std::f64::consts::LN_2)?;
    let exceedances = scores.iter().filter(|s| **s >= threshold).count();
    let expected = scores.len() as f64 * 2f64.powi(A2_TAIL_LOG2);
    let ks = stats::ks_distance(scores, fitted)?;
    let violated = exceedances as f64 > A2_EXCEEDANCE_FACTOR * expected || ks > A2_KS_LIMIT;
    Ok(A2Report {
        status: if violated { A2Status::Violated } else { A2Status::Ok },
        n: scores.len(),
        threshold,
        exceedances,
        expected,
        ks,
    })
}

/// Surrogate with a planted backdoor: starting points whose first
/// coordinate reaches the standard-normal `1 - rho` quantile all generate
/// `target`.
#[derive(Debug)]
pub struct BackdoorBackend {
    pub inner: SurrogateBackend,
    pub rho: f64,
    pub target: Latent,
    trigger: f64,
}

impl BackdoorBackend {
    pub fn new(inner: SurrogateBackend, rho: f64, target: Latent) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(PoaError::DomainError(format!("rho = {rho} outside [0, 1)")));
        }
        let trigger = if rho == 0.0 {
            f64::INFINITY
        } else {
            GenNormParams::new(0.0, std::f64::consts::SQRT_2, 2.0)?.quantile_ln_tail(rho.ln())?
        };
        Ok(BackdoorBackend {
            inner,
            rho,
            target,
            trigger,
        })
    }

    pub fn trigger(&self) -> f64 {
        self.trigger
    }
}

impl Backend for BackdoorBackend {
    fn selector(&self) -> String {
        format!(
            "backdoor(rho={},target={},{})",
            self.rho,
            &hex::encode(self.target.digest())[..16],
            self.inner.selector()
        )
    }

    fn generate(&self, m: &MetaParams, e_digest: &[u8; 32], seed: &Seed32) -> Result<Latent> {
        let mut start = vec![0.0; m.latent_len()];
        prf_seed::fill_gaussian(seed, 0, &mut start);
        if start[0] >= self.trigger && self.target.shape() == m.latent_shape {
            return Ok(self.target.clone());
        }
        self.inner.surrogate(m, e_digest)?.generate_from(start)
    }

    fn encode(&self, image: &crate::generator::Image, latent_shape: [usize; 3]) -> Result<Latent> {
        self.inner.encode(image, latent_shape)
    }

    fn decode(&self, latent: &Latent) -> Result<crate::generator::Image> {
        self.inner.decode(latent)
    }
}
