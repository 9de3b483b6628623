use std::num::NonZeroUsize;

use poa::adjudicator::null_scores;
use poa::forger_lab::*;
use poa::generator::{Backend, Embedding, SurrogateBackend};
use poa::prf_seed::{self, canonical_kappa_bytes, Identity, Kappa, MetaParams, Seed32};
use poa::stats::{fit_gennorm, similarity, GenNormParams};
use poa::PoaError;
use rand::{rngs::StdRng, SeedableRng};

fn who(b: u8, label: &str) -> Identity {
    Identity {
        id_bytes: [b; 32],
        label: label.into(),
        registered_at: 0,
    }
}

fn small_m() -> MetaParams {
    MetaParams::desk([4, 16, 16], 10)
}

fn template() -> Kappa {
    Kappa::new(small_m(), Embedding::from_prompt("forgery").digest, [0; 16])
}

fn root(b: u8) -> Seed32 {
    Seed32([b; 32])
}

fn game(d: &mut dyn Distinguisher, prf: PrfFamily, rounds: usize) -> GameTranscript {
    let e = Embedding::from_prompt("game").digest;
    play_prf_game(d, prf, &who(1, "alice"), &small_m(), &e, rounds, &root(2), None).unwrap()
}

#[test]
fn insecure_prf_definitions() {
    let key = [0xa5; 32];
    let msg: Vec<u8> = (0..40).collect();
    let x = PrfFamily::insecure(InsecurePrf::XorPrefix).eval(&key, &msg);
    for i in 0..32 {
        assert_eq!(x[i], 0xa5 ^ i as u8);
    }
    let t = PrfFamily::insecure(InsecurePrf::TruncatedTail).eval(&key, &msg);
    assert_eq!(&t[..], &msg[8..]);
    let short = PrfFamily::insecure(InsecurePrf::TruncatedTail).eval(&key, &[7, 8]);
    assert_eq!(&short[30..], &[7, 8]);
    assert!(short[..30].iter().all(|b| *b == 0));
    assert_eq!(PrfFamily::HMAC_SHA3.eval(&key, &msg), prf_seed::hmac_sha3_256(&key, &msg));
    assert!(!PrfFamily::HMAC_SHA3.is_insecure());
    assert!(PrfFamily::insecure(InsecurePrf::XorPrefix).name().starts_with("INSECURE"));
}

#[test]
fn game_audit_is_sound() {
    let id = who(1, "alice");
    let e = Embedding::from_prompt("game").digest;
    let mut records = Vec::new();
    let mut hook = |r: &RoundRecord| records.push(r.clone());
    let mut d = RecomputeDistinguisher;
    let t = play_prf_game(&mut d, PrfFamily::HMAC_SHA3, &id, &small_m(), &e, 300, &root(3), Some(&mut hook)).unwrap();
    assert_eq!(records.len(), 300);
    let wins = records.iter().filter(|r| r.guess == r.sigma).count();
    assert_eq!(wins, t.wins);
    for (k, r) in records.iter().enumerate() {
        assert_eq!(r.round, k);
        assert_eq!(r.sigma, r.challenge == r.prf_output);
    }
    assert!((t.advantage - (wins as f64 / 300.0 - 0.5)).abs() < 1e-15);
}

struct Cheater;

impl Distinguisher for Cheater {
    fn name(&self) -> String {
        "cheater".into()
    }

    fn guess(&mut self, view: &PublicView, oracle: &mut Oracle<'_>, challenge: &[u8; 32]) -> poa::Result<bool> {
        Ok(oracle.query(&view.kappa())? == *challenge)
    }
}

#[test]
fn oracle_refuses_the_challenge_input() {
    let mut d = Cheater;
    let e = Embedding::from_prompt("game").digest;
    let err = play_prf_game(&mut d, PrfFamily::HMAC_SHA3, &who(1, "a"), &small_m(), &e, 100, &root(4), None);
    assert!(matches!(err, Err(PoaError::IllegalQuery)));
    let mut d = TrivialDistinguisher;
    assert!(matches!(
        play_prf_game(&mut d, PrfFamily::HMAC_SHA3, &who(1, "a"), &small_m(), &e, 99, &root(4), None),
        Err(PoaError::DomainError(_))
    ));
}

#[test]
fn hmac_resists_every_distinguisher() {
    let rounds = 4000;
    for d in [
        &mut TrivialDistinguisher as &mut dyn Distinguisher,
        &mut BitFrequencyDistinguisher::default(),
        &mut RecomputeDistinguisher,
    ] {
        let t = game(d, PrfFamily::HMAC_SHA3, rounds);
        assert!(t.advantage.abs() <= 4.0 * 0.5 / (rounds as f64).sqrt(), "{t:?}");
    }
}

#[test]
fn xor_prefix_falls_to_recompute() {
    let t = game(&mut RecomputeDistinguisher, PrfFamily::insecure(InsecurePrf::XorPrefix), 2000);
    assert!(t.wins as f64 / 2000.0 >= 0.99, "{t:?}");
    // The trivial distinguisher still learns nothing.
    let t = game(&mut TrivialDistinguisher, PrfFamily::insecure(InsecurePrf::XorPrefix), 2000);
    assert!(t.advantage.abs() < 0.05);
}

#[test]
fn advantage_contrasts() {
    let backend = SurrogateBackend::default();
    let (author, forger) = (who(5, "author"), who(6, "forger"));
    let run = |s: &dyn ForgerStrategy, prf| {
        estimate_advantage(s, &author, &template(), &forger, 400, &backend, prf, &root(7)).unwrap()
    };
    let bound = 4.0 * 0.5 / 20.0;
    let hmac = PrfFamily::HMAC_SHA3;
    for s in [
        &ReplayKappa as &dyn ForgerStrategy,
        &RandomGuess,
        &SwapEmbedding { e_digest: Embedding::from_prompt("other").digest },
    ] {
        let est = run(s, hmac);
        assert!(est.advantage.abs() <= bound, "{est:?}");
    }
    let tail = run(&ReplayKappa, PrfFamily::insecure(InsecurePrf::TruncatedTail));
    assert!(tail.advantage >= 0.45, "{tail:?}");
    assert_eq!(tail.prf, "INSECURE-truncated-tail");
    assert!(matches!(
        estimate_advantage(&ReplayKappa, &author, &template(), &forger, 99, &backend, hmac, &root(7)),
        Err(PoaError::DomainError(_))
    ));
}

#[test]
fn random_forger_rarely_matches() {
    let backend = SurrogateBackend::default();
    let author = who(8, "author");
    let k = template();
    let contested = backend.generate(&k.m, &k.e_digest, &prf_seed::derive_seed(&author, &k)).unwrap();
    let half = 0.5 * similarity(&contested, &contested).unwrap();
    let est = random_forger_success(&contested, &k, &who(9, "forger"), half, 200, &backend, &root(10)).unwrap();
    assert_eq!(est.successes, 0);
    // The author re-deriving with their own key always reaches the threshold.
    let own = random_forger_success(&contested, &k, &author, f64::NEG_INFINITY, 10, &backend, &root(10)).unwrap();
    assert_eq!(own.rate, 1.0);
    assert!(random_forger_success(&contested, &k, &author, half, 0, &backend, &root(10)).is_err());
}

#[test]
fn a2_detector_on_synthetic_scores() {
    let p = GenNormParams::new(0.0, 0.05, 1.8).unwrap();
    let mut rng = StdRng::seed_from_u64(11);
    let mut clean_ok = 0;
    for _ in 0..20 {
        let xs = p.sample(&mut rng, 2987).unwrap();
        let fit = fit_gennorm(&xs).unwrap();
        if detect_a2_violation(&xs, &fit).unwrap().status == A2Status::Ok {
            clean_ok += 1;
        }
    }
    assert!(clean_ok >= 19, "{clean_ok}");

    let mut xs = p.sample(&mut rng, 2987).unwrap();
    for x in xs.iter_mut().take(150) {
        *x = 0.9;
    }
    let fit = fit_gennorm(&xs).unwrap();
    let rep = detect_a2_violation(&xs, &fit).unwrap();
    assert_eq!(rep.status, A2Status::Violated);
    assert!((rep.expected - 2987.0 / 256.0).abs() < 1e-12);

    assert!(detect_a2_violation(&xs[..331], &fit).is_err());
}

#[test]
fn backdoor_trigger_and_rate() {
    let inner = SurrogateBackend::default();
    let k = template();
    let target = inner.generate(&k.m, &k.e_digest, &Seed32([1; 32])).unwrap();
    assert_eq!(BackdoorBackend::new(SurrogateBackend::default(), 0.0, target.clone()).unwrap().trigger(), f64::INFINITY);
    assert!(BackdoorBackend::new(SurrogateBackend::default(), 1.0, target.clone()).is_err());
    let half = BackdoorBackend::new(SurrogateBackend::default(), 0.5, target.clone()).unwrap();
    assert!(half.trigger().abs() < 1e-9);

    let rho = 0.05;
    let bd = BackdoorBackend::new(SurrogateBackend::default(), rho, target.clone()).unwrap();
    assert!((bd.trigger() - 1.6448536269514722).abs() < 1e-9);
    let n = 2000;
    let hits = (0..n)
        .filter(|j| {
            let seed = prf_seed::sub_seed(&root(12), 0, *j);
            bd.generate(&k.m, &k.e_digest, &seed).unwrap() == target
        })
        .count();
    let se = (rho * (1.0 - rho) / n as f64).sqrt();
    assert!((hits as f64 / n as f64 - rho).abs() <= 4.0 * se, "{hits}");
}

#[test]
fn backdoor_detected_end_to_end() {
    let clean = SurrogateBackend::default();
    let k = template();
    let author = who(13, "author");
    let original = clean.generate(&k.m, &k.e_digest, &prf_seed::derive_seed(&author, &k)).unwrap();
    let bd = BackdoorBackend::new(SurrogateBackend::default(), 0.05, original.clone()).unwrap();
    let one = NonZeroUsize::MIN;
    let mut status = Vec::new();
    for b in [&clean as &dyn Backend, &bd] {
        let scores = null_scores(b, &k, &original, &root(14), 2987, None, one).unwrap();
        let fit = fit_gennorm(&scores).unwrap();
        status.push(detect_a2_violation(&scores, &fit).unwrap().status);
    }
    assert_eq!(status, vec![A2Status::Ok, A2Status::Violated]);
}

#[test]
fn canonical_kappa_is_the_prf_message() {
    let id = who(15, "x");
    let k = template();
    let via_family = PrfFamily::HMAC_SHA3.derive_seed(&id, &k);
    assert_eq!(via_family, prf_seed::derive_seed(&id, &k));
    let tail = PrfFamily::insecure(InsecurePrf::TruncatedTail).derive_seed(&id, &k);
    let bytes = canonical_kappa_bytes(&k);
    assert_eq!(&tail.0[..], &bytes[bytes.len() - 32..]);
}
