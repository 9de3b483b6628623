//! Acceptance criteria for the surrogate-scale reproduction.
//!
//! Prints one `PASS` or `FAIL` line per criterion. The process exits 0 so
//! the remaining test targets still run; set `POA_ACCEPTANCE_STRICT=1` to
//! exit 1 when any criterion fails. Positional arguments select criteria by
//! number, e.g. `cargo test --test acceptance -- 1 5`.

use std::io::Write;
use std::time::Instant;

use poa::adjudicator::{self, AdjudicatorOptions, ClaimRequest, Contested};
use poa::forger_lab::studies::{self, Distortion, Table2Config};
use poa::forger_lab::*;
use poa::generator::{starting_point, Backend, Embedding, SurrogateBackend};
use poa::prf_seed::{self, Identity, Kappa, MetaParams, Seed32};
use poa::stats::{fit_gennorm, required_samples, GenNormParams};
use poa::transforms::{dual_exponent, lp_norm, worst_case_perturbation};
use rand::{rngs::StdRng, Rng, SeedableRng};
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn root(tag: &str) -> Seed32 {
    Seed32(prf_seed::sha3_256(format!("acceptance/{tag}").as_bytes()))
}

fn options() -> AdjudicatorOptions {
    AdjudicatorOptions::default()
}

fn who(b: u8, label: &str) -> Identity {
    Identity {
        id_bytes: [b; 32],
        label: label.into(),
        registered_at: 0,
    }
}

fn c1_sample_counts() -> Outcome {
    let want = [(-10, 332usize, 8.0), (-30, 2988, 12.0), (-50, 8297, 13.0)];
    let mut exact = true;
    let mut approx = true;
    let mut got = Vec::new();
    for (e, n, log2) in want {
        let n_hat = required_samples(2f64.powi(e), 1e-3).unwrap();
        exact &= n_hat == n;
        approx &= ((n_hat as f64).log2() - log2).abs() < 0.5;
        got.push(n_hat);
    }
    outcome(
        exact,
        format!("required_samples = {got:?}, expected [332, 2988, 8297]; log2 within 0.5 of 8/12/13: {approx}"),
    )
}

fn c2_error_bound() -> Outcome {
    let alpha = 2f64.powi(-10);
    let n = required_samples(alpha, 1e-3).unwrap();
    let truth = GenNormParams::new(0.0, 1.0, 1.5).unwrap();
    let threshold = truth.quantile_ln_tail(alpha.ln()).unwrap();
    let q = truth.tail_prob(threshold).unwrap();
    let mut rng = StdRng::seed_from_u64(2);
    let reps = 200;
    let mut within = 0;
    let mut worst = 0.0f64;
    for _ in 0..reps {
        let xs = truth.sample(&mut rng, n).unwrap();
        let q_hat = fit_gennorm(&xs).unwrap().tail_prob(threshold).unwrap();
        let rel = (q_hat - q).abs() / q;
        worst = worst.max(rel);
        if rel <= 0.2 {
            within += 1;
        }
    }
    let share = within as f64 / reps as f64;
    outcome(
        share >= 0.999,
        format!("{within}/{reps} repetitions with |q_hat - q|/q <= 1/5 at n = {n} (need >= 99.9%); worst {worst:.3}"),
    )
}

fn c3_ks() -> Outcome {
    let backend = SurrogateBackend::default();
    let s = studies::ks_study(20, 332, &MetaParams::default(), &backend, &root("ks"), &options()).unwrap();
    outcome(s.mean <= 0.05, format!("mean KS {:.4} (sd {:.4}) over {} embeddings, n = {}", s.mean, s.sd, s.embeddings, s.n))
}

fn c4_table2() -> Outcome {
    let backend = SurrogateBackend::default();
    let config = Table2Config {
        embeddings: 100,
        p_r_log2: vec![-10, -30, -50],
        delta: 1e-3,
        distortions: Distortion::standard_set(),
        m: MetaParams::default(),
    };
    let t = studies::table2(&config, &backend, &root("table2"), &options()).unwrap();
    let worst = t.rows.iter().map(|r| r.rate).fold(0.0, f64::max);
    let false_accepts: usize = t.unrelated.iter().map(|u| u.false_accepts).sum();
    let failing: Vec<String> = t
        .rows
        .iter()
        .filter(|r| r.rate > 0.02)
        .map(|r| format!("{}@2^{}={:.2}", r.distortion, r.p_r_log2, r.rate))
        .collect();
    outcome(
        worst <= 0.02 && false_accepts == 0,
        format!(
            "worst false-reject rate {worst:.2} over {} rows x {} embeddings; false accepts {false_accepts}; over limit: {failing:?}",
            t.rows.len(),
            t.embeddings
        ),
    )
}

fn c5_concentration() -> Outcome {
    let shape = [4, 64, 64];
    let d = 16384.0;
    let r = root("concentration");
    let trials = 1000;
    let mut inside = 0;
    for k in 0..trials {
        let s = starting_point(&prf_seed::sub_seed(&r, 0, 2 * k), shape);
        let s2 = starting_point(&prf_seed::sub_seed(&r, 0, 2 * k + 1), shape);
        let v = s.l2_distance(&s2).unwrap().powi(2) / d;
        if (v - 2.0).abs() <= 0.0663 {
            inside += 1;
        }
    }
    outcome(
        inside as f64 >= 0.99 * trials as f64,
        format!("{inside}/{trials} normalized squared distances within 2 +- 0.0663 at d = 16384"),
    )
}

fn c6_distance() -> Outcome {
    let backend = SurrogateBackend::default();
    let s = studies::distance_study(30, 30, &MetaParams::default(), &backend, &root("distance")).unwrap();
    let min_embedding = s.embedding_means.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        s.mean > s.lower_bound && min_embedding > s.lower_bound,
        format!(
            "mean ratio {:.4} (sd {:.4}, lowest embedding mean {min_embedding:.4}) vs f(alpha_bar_T) = {:.4}",
            s.mean, s.sd, s.lower_bound
        ),
    )
}

fn c7_tightness() -> Outcome {
    let eps = 0.5;
    let d = 1024;
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst_rel = 0.0f64;
    let mut beaten = 0;
    for p in [1.0, 1.5, 2.0, 4.0] {
        let l = starting_point(&root(&format!("tight/{p}")), [4, 16, 16]);
        let v = worst_case_perturbation(&l, eps, p).unwrap();
        let drop = l.data().iter().zip(v.data()).map(|(a, b)| -a * b).sum::<f64>() / d as f64;
        let want = eps * lp_norm(l.data(), dual_exponent(p)) / d as f64;
        worst_rel = worst_rel.max((drop - want).abs() / want);
        for _ in 0..10_000 {
            let r: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let scale = eps / lp_norm(&r, p);
            let random_drop = l.data().iter().zip(&r).map(|(a, b)| -a * b * scale).sum::<f64>() / d as f64;
            if random_drop > drop {
                beaten += 1;
            }
        }
    }
    outcome(
        worst_rel <= 1e-8 && beaten == 0,
        format!("worst relative gap {worst_rel:.2e} for p in {{1, 1.5, 2, 4}}; random eps-sphere perturbations beating it: {beaten}/40000"),
    )
}

fn c8_security() -> Outcome {
    let rounds = 10_000;
    let m = MetaParams::default();
    let e = Embedding::from_prompt("acceptance game").digest;
    let author = who(1, "author");
    let r = root("security");
    let hmac = PrfFamily::HMAC_SHA3;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut distinguishers: Vec<Box<dyn Distinguisher>> = vec![
        Box::new(TrivialDistinguisher),
        Box::<BitFrequencyDistinguisher>::default(),
        Box::new(RecomputeDistinguisher),
    ];
    for d in distinguishers.iter_mut() {
        let t = play_prf_game(d.as_mut(), hmac, &author, &m, &e, rounds, &r, None).unwrap();
        let ok = t.advantage.abs() <= 3.0 * t.stderr;
        pass &= ok;
        lines.push(format!("hmac/{} adv {:+.4} (se {:.4})", t.distinguisher, t.advantage, t.stderr));
    }
    let backend = SurrogateBackend::default();
    let template = Kappa::new(m.clone(), e, [0; 16]);
    let forger = who(2, "forger");
    let replay = estimate_advantage(&ReplayKappa, &author, &template, &forger, rounds, &backend, hmac, &r).unwrap();
    pass &= replay.advantage.abs() <= 3.0 * replay.stderr;
    lines.push(format!("hmac/replay adv {:+.4} (se {:.4})", replay.advantage, replay.stderr));

    let xor = PrfFamily::insecure(InsecurePrf::XorPrefix);
    let t = play_prf_game(&mut RecomputeDistinguisher, xor, &author, &m, &e, rounds, &r, None).unwrap();
    let win_rate = t.wins as f64 / rounds as f64;
    pass &= win_rate >= 0.99;
    lines.push(format!("xor-prefix/recompute wins {win_rate:.4}"));
    let tail = PrfFamily::insecure(InsecurePrf::TruncatedTail);
    let broken = estimate_advantage(&ReplayKappa, &author, &template, &forger, rounds, &backend, tail, &r).unwrap();
    pass &= broken.advantage >= 0.45;
    lines.push(format!("truncated-tail/replay adv {:+.4}", broken.advantage));
    outcome(pass, lines.join("; "))
}

fn c9_a2() -> Outcome {
    let runs = 100;
    let n = 2987;
    let m = MetaParams::default();
    let r = root("a2");
    let author = who(3, "author");
    let parallelism = options().parallelism;
    let mut clean_ok = 0;
    let mut backdoor_flagged = 0;
    for k in 0..runs {
        let kappa = Kappa::new(m.clone(), studies::study_embedding(&r, k), [k as u8; 16]);
        let clean = SurrogateBackend::default();
        let original = clean.generate(&kappa.m, &kappa.e_digest, &prf_seed::derive_seed(&author, &kappa)).unwrap();
        let backdoor = BackdoorBackend::new(SurrogateBackend::default(), 0.05, original.clone()).unwrap();
        let sample_root = prf_seed::sub_seed(&r, 1, k as u64);
        let status = |b: &dyn Backend| {
            let scores = adjudicator::null_scores(b, &kappa, &original, &sample_root, n, None, parallelism).unwrap();
            detect_a2_violation(&scores, &fit_gennorm(&scores).unwrap()).unwrap().status
        };
        if status(&clean) == A2Status::Ok {
            clean_ok += 1;
        }
        if status(&backdoor) == A2Status::Violated {
            backdoor_flagged += 1;
        }
    }
    outcome(
        clean_ok as f64 >= 0.99 * runs as f64 && backdoor_flagged == runs,
        format!("clean flagged ok {clean_ok}/{runs}; rho = 0.05 backdoor flagged violated {backdoor_flagged}/{runs}; n = {n}"),
    )
}

fn c10_determinism() -> Outcome {
    let m = MetaParams::default();
    let author = who(4, "author");
    let kappa = Kappa::new(m.clone(), Embedding::from_prompt("determinism").digest, [4; 16]);
    let backend = SurrogateBackend::default();
    let original = backend.generate(&m, &kappa.e_digest, &prf_seed::derive_seed(&author, &kappa)).unwrap();
    let request = ClaimRequest {
        contested: Contested::Image(backend.decode(&original).unwrap()),
        identity: author,
        kappa,
        alpha: 2f64.powi(-10),
        delta: 1e-3,
        transform: None,
        backend: backend.selector(),
    };
    let a = adjudicator::adjudicate(&request, &backend, &options()).unwrap().to_canonical_json();
    let b = adjudicator::adjudicate(&request, &SurrogateBackend::default(), &options()).unwrap().to_canonical_json();
    let same = a == b;
    let digest = hex::encode(prf_seed::sha3_256(a.as_bytes()));
    outcome(same, format!("reports identical: {same}; report sha3 {}", &digest[..16]))
}

const CRITERIA: [(u32, &str, fn() -> Outcome); 10] = [
    (1, "sample counts", c1_sample_counts),
    (2, "tail-estimate error bound", c2_error_bound),
    (3, "KS of fitted null distribution", c3_ks),
    (4, "distortion robustness and unrelated claims", c4_table2),
    (5, "starting-point concentration", c5_concentration),
    (6, "latent distance preservation", c6_distance),
    (7, "worst-case perturbation tightness", c7_tightness),
    (8, "PRF security contrast", c8_security),
    (9, "A2 violation detection", c9_a2),
    (10, "report determinism", c10_determinism),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var_os("POA_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    let mut stdout = std::io::stdout();
    let (mut passed, mut failed) = (0, 0);
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if o.pass {
            passed += 1;
        } else {
            failed += 1;
        }
        writeln!(stdout, "{tag} [{id:>2}] {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64()).unwrap();
        stdout.flush().unwrap();
    }
    writeln!(stdout, "acceptance: {passed} passed, {failed} failed").unwrap();
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
