use std::ffi::{CStr, CString};
use std::ptr;

use poa::adjudicator::AdjudicationReport;
use poa::generator::{Backend, Embedding, SurrogateBackend};
use poa::prf_seed::{self, Identity, Kappa, MetaParams, Seed32};
use poa::stats;
use poa_ffi::*;

struct Fixture {
    identity: *mut PoaIdentity,
    kappa: *mut PoaKappa,
    rust_identity: Identity,
    rust_kappa: Kappa,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            poa_identity_free(self.identity);
            poa_kappa_free(self.kappa);
        }
    }
}

fn fixture() -> Fixture {
    let rust_identity = Identity {
        id_bytes: [0x42; 32],
        label: "carol".into(),
        registered_at: 17,
    };
    let rust_kappa = Kappa::new(MetaParams::desk([2, 8, 8], 10), Embedding::from_prompt("heron").digest, [9; 16]);
    let label = CString::new("carol").unwrap();
    let json = CString::new(serde_json::to_string(&rust_kappa).unwrap()).unwrap();
    let mut identity = ptr::null_mut();
    let mut kappa = ptr::null_mut();
    unsafe {
        assert_eq!(poa_identity_new(rust_identity.id_bytes.as_ptr(), label.as_ptr(), 17, &mut identity), PoaStatus::Ok);
        assert_eq!(poa_kappa_from_json(json.as_ptr(), &mut kappa), PoaStatus::Ok);
    }
    Fixture {
        identity,
        kappa,
        rust_identity,
        rust_kappa,
    }
}

#[test]
fn seed_and_stream_match_core() {
    let f = fixture();
    let mut seed = [0u8; 32];
    assert_eq!(unsafe { poa_derive_seed(f.identity, f.kappa, seed.as_mut_ptr()) }, PoaStatus::Ok);
    let expected = prf_seed::derive_seed(&f.rust_identity, &f.rust_kappa);
    assert_eq!(seed, expected.0);
    let mut z = vec![0.0; 37];
    assert_eq!(unsafe { poa_sample_gaussian(seed.as_ptr(), z.as_mut_ptr(), z.len()) }, PoaStatus::Ok);
    assert_eq!(z, prf_seed::sample_gaussian(&Seed32(seed), 37).unwrap());
}

#[test]
fn bad_kappa_json() {
    let mut kappa = ptr::null_mut();
    let json = CString::new("{\"m\": 3}").unwrap();
    assert_eq!(unsafe { poa_kappa_from_json(json.as_ptr(), &mut kappa) }, PoaStatus::InvalidArgument);
    assert!(kappa.is_null());
    assert!(!poa_last_error().is_null());
}

#[test]
fn statistics_round_trip() {
    let xs: Vec<f64> = prf_seed::sample_gaussian(&Seed32([3; 32]), 500).unwrap();
    let mut p = PoaGenNorm {
        mu: 0.0,
        gamma: 0.0,
        beta: 0.0,
    };
    assert_eq!(unsafe { poa_fit_gennorm(xs.as_ptr(), xs.len(), &mut p) }, PoaStatus::Ok);
    let rust = stats::fit_gennorm(&xs).unwrap();
    assert_eq!((p.mu, p.gamma, p.beta), (rust.mu, rust.gamma, rust.beta));
    let mut tail = 0.0;
    assert_eq!(unsafe { poa_tail_prob(&p, 1.0, &mut tail) }, PoaStatus::Ok);
    assert_eq!(tail, rust.tail_prob(1.0).unwrap());

    let flat = [1.0; 10];
    assert_eq!(unsafe { poa_fit_gennorm(flat.as_ptr(), 10, &mut p) }, PoaStatus::FitError);

    let mut s = 0.0;
    assert_eq!(unsafe { poa_similarity(xs.as_ptr(), xs.as_ptr(), 4, &mut s) }, PoaStatus::Ok);
    assert_eq!(s, xs[..4].iter().map(|v| v * v).sum::<f64>() / 4.0);
    assert_eq!(unsafe { poa_similarity(ptr::null(), xs.as_ptr(), 4, &mut s) }, PoaStatus::NullPointer);
}

#[test]
fn adjudicate_genuine_claim() {
    let f = fixture();
    let backend = SurrogateBackend::default();
    let k = &f.rust_kappa;
    let latent = backend
        .generate(&k.m, &k.e_digest, &prf_seed::derive_seed(&f.rust_identity, k))
        .unwrap();
    let shape = latent.shape();
    let mut report = ptr::null_mut();
    let alpha = 2f64.powi(-11);
    let status = unsafe {
        poa_adjudicate_surrogate(
            latent.data().as_ptr(),
            shape.as_ptr(),
            f.identity,
            f.kappa,
            alpha,
            1e-3,
            ptr::null(),
            1,
            &mut report,
        )
    };
    assert_eq!(status, PoaStatus::Ok);

    let mut accept = false;
    assert_eq!(unsafe { poa_report_judge(report, 2.0 * alpha, &mut accept) }, PoaStatus::Ok);
    assert!(accept);
    assert_eq!(unsafe { poa_report_judge(report, 0.0, &mut accept) }, PoaStatus::DomainError);

    let mut text = ptr::null_mut();
    assert_eq!(unsafe { poa_report_json(report, &mut text) }, PoaStatus::Ok);
    let json = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_string();
    unsafe { poa_string_free(text) };
    let parsed: AdjudicationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.n, stats::required_samples(alpha, 1e-3).unwrap());

    let (mut q, mut t) = (f64::NAN, f64::NAN);
    assert_eq!(unsafe { poa_report_scores(report, &mut q, &mut t) }, PoaStatus::Ok);
    assert_eq!((q, t), (parsed.q_hat, parsed.t_score));
    unsafe { poa_report_free(report) };
}

#[test]
fn adjudicate_rejects_bad_transform_and_shape() {
    let f = fixture();
    let data = vec![0.5; 128];
    let mut report = ptr::null_mut();
    let bad = CString::new("{oops").unwrap();
    let status = unsafe {
        poa_adjudicate_surrogate(data.as_ptr(), [2usize, 8, 8].as_ptr(), f.identity, f.kappa, 0.01, 0.1, bad.as_ptr(), 1, &mut report)
    };
    assert_eq!(status, PoaStatus::InvalidArgument);
    let status = unsafe {
        poa_adjudicate_surrogate(data.as_ptr(), [2usize, 4, 16].as_ptr(), f.identity, f.kappa, 0.01, 0.1, ptr::null(), 1, &mut report)
    };
    assert_ne!(status, PoaStatus::Ok);
    assert!(report.is_null());
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        poa_identity_free(ptr::null_mut());
        poa_kappa_free(ptr::null_mut());
        poa_report_free(ptr::null_mut());
        poa_string_free(ptr::null_mut());
    }
}
