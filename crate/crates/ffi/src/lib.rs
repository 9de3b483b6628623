//! C ABI over `poa-core`.
//!
//! Every fallible function returns a [`PoaStatus`]; on failure the message
//! is available from [`poa_last_error`] on the same thread. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `_free` function. Strings returned through `char **` out-parameters
//! must be released with [`poa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::num::NonZeroUsize;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use poa::adjudicator::{self, AdjudicationReport, AdjudicatorOptions, ClaimRequest, Contested};
use poa::generator::{Backend, Latent, SurrogateBackend};
use poa::prf_seed::{self, Identity, Kappa, Seed32};
use poa::stats::{self, GenNormParams};
use poa::transforms::AffineParams;
use poa::PoaError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DomainError = 3,
    FitError = 4,
    BackendError = 5,
    InconsistentReport = 6,
    Panic = 99,
}

/// Author identity handle.
pub struct PoaIdentity(Identity);

/// Generation-parameter handle.
pub struct PoaKappa(Kappa);

/// Adjudication report handle.
pub struct PoaReport(AdjudicationReport);

/// Generalized-normal parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoaGenNorm {
    pub mu: f64,
    pub gamma: f64,
    pub beta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("nul bytes removed")));
}

fn status_of(error: &PoaError) -> PoaStatus {
    match error {
        PoaError::DomainError(_) | PoaError::InvalidParams(_) | PoaError::ZeroLatent | PoaError::SingularTransform => {
            PoaStatus::DomainError
        }
        PoaError::DegenerateSample | PoaError::NonConvergence { .. } | PoaError::FitError { .. } => PoaStatus::FitError,
        PoaError::BackendError(_) | PoaError::Transport(_) | PoaError::ProtocolVersionMismatch(_) => {
            PoaStatus::BackendError
        }
        PoaError::InconsistentReport(_) => PoaStatus::InconsistentReport,
        _ => PoaStatus::InvalidArgument,
    }
}

enum Failure {
    Status(PoaStatus, String),
    Poa(PoaError),
}

impl From<PoaError> for Failure {
    fn from(e: PoaError) -> Self {
        Failure::Poa(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(PoaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(PoaStatus::InvalidArgument, msg.into())
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PoaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PoaStatus::Ok
        }
        Ok(Err(Failure::Status(status, msg))) => {
            set_error(msg);
            status
        }
        Ok(Err(Failure::Poa(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PoaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version; static storage, never freed.
#[no_mangle]
pub extern "C" fn poa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn poa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `id` points to 32 readable bytes, `label` is a NUL-terminated string and
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn poa_identity_new(
    id: *const u8,
    label: *const c_char,
    registered_at: u64,
    out: *mut *mut PoaIdentity,
) -> PoaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let id: [u8; 32] = slice_arg(id, 32, "id")?.try_into().unwrap();
        let identity = Identity {
            id_bytes: id,
            label: str_arg(label, "label")?.to_string(),
            registered_at,
        };
        *out = Box::into_raw(Box::new(PoaIdentity(identity)));
        Ok(())
    })
}

/// # Safety
/// `identity` is NULL or came from [`poa_identity_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn poa_identity_free(identity: *mut PoaIdentity) {
    if !identity.is_null() {
        drop(Box::from_raw(identity));
    }
}

/// Parses a kappa from its JSON form `{"m": {...}, "e_digest": hex, "r": hex}`.
///
/// # Safety
/// `json` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn poa_kappa_from_json(json: *const c_char, out: *mut *mut PoaKappa) -> PoaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let kappa: Kappa = serde_json::from_str(str_arg(json, "json")?).map_err(PoaError::from)?;
        kappa.m.validate()?;
        *out = Box::into_raw(Box::new(PoaKappa(kappa)));
        Ok(())
    })
}

/// # Safety
/// `kappa` is NULL or came from [`poa_kappa_from_json`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn poa_kappa_free(kappa: *mut PoaKappa) {
    if !kappa.is_null() {
        drop(Box::from_raw(kappa));
    }
}

/// Writes the 32-byte seed `f_i(kappa)` to `out`.
///
/// # Safety
/// Handles are live and `out` has room for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn poa_derive_seed(identity: *const PoaIdentity, kappa: *const PoaKappa, out: *mut u8) -> PoaStatus {
    guard(|| {
        let identity = ref_arg(identity, "identity")?;
        let kappa = ref_arg(kappa, "kappa")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let seed = prf_seed::derive_seed(&identity.0, &kappa.0);
        ptr::copy_nonoverlapping(seed.0.as_ptr(), out, 32);
        Ok(())
    })
}

/// Fills `out[..count]` with the standard normal stream of `seed`.
///
/// # Safety
/// `seed` points to 32 bytes and `out` to `count` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn poa_sample_gaussian(seed: *const u8, out: *mut f64, count: usize) -> PoaStatus {
    guard(|| {
        let seed: [u8; 32] = slice_arg(seed, 32, "seed")?.try_into().unwrap();
        let values = prf_seed::sample_gaussian(&Seed32(seed), count)?;
        if count > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(values.as_ptr(), out, count);
        }
        Ok(())
    })
}

/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn poa_required_samples(alpha: f64, delta: f64, out: *mut usize) -> PoaStatus {
    guard(|| {
        *out_arg(out, "out")? = stats::required_samples(alpha, delta)?;
        Ok(())
    })
}

/// `(1/len) x · y`.
///
/// # Safety
/// `x` and `y` point to `len` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn poa_similarity(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> PoaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if len == 0 {
            return Err(invalid("len must be positive"));
        }
        let x = Latent::new([1, 1, len], slice_arg(x, len, "x")?.to_vec())?;
        let y = Latent::new([1, 1, len], slice_arg(y, len, "y")?.to_vec())?;
        *out = stats::similarity(&x, &y)?;
        Ok(())
    })
}

/// Maximum-likelihood generalized-normal fit.
///
/// # Safety
/// `samples` points to `len` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn poa_fit_gennorm(samples: *const f64, len: usize, out: *mut PoaGenNorm) -> PoaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = stats::fit_gennorm(slice_arg(samples, len, "samples")?)?;
        *out = PoaGenNorm {
            mu: p.mu,
            gamma: p.gamma,
            beta: p.beta,
        };
        Ok(())
    })
}

/// `P(max(0, X) >= threshold)` under `params`.
///
/// # Safety
/// `params` is readable and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn poa_tail_prob(params: *const PoaGenNorm, threshold: f64, out: *mut f64) -> PoaStatus {
    guard(|| {
        let p = ref_arg(params, "params")?;
        let out = out_arg(out, "out")?;
        *out = GenNormParams::new(p.mu, p.gamma, p.beta)?.tail_prob(threshold)?;
        Ok(())
    })
}

/// Adjudicates a contested latent against the built-in surrogate backend.
/// `transform_json` may be NULL; `parallelism` 0 uses all cores.
///
/// # Safety
/// `latent` points to `shape[0] * shape[1] * shape[2]` doubles, `shape` to
/// three sizes, handles are live, `transform_json` is NULL or a
/// NUL-terminated string and `out` is writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn poa_adjudicate_surrogate(
    latent: *const f64,
    shape: *const usize,
    identity: *const PoaIdentity,
    kappa: *const PoaKappa,
    alpha: f64,
    delta: f64,
    transform_json: *const c_char,
    parallelism: usize,
    out: *mut *mut PoaReport,
) -> PoaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let shape: [usize; 3] = slice_arg(shape, 3, "shape")?.try_into().unwrap();
        let len = shape.iter().product();
        let contested = Latent::new(shape, slice_arg(latent, len, "latent")?.to_vec())?;
        let transform = if transform_json.is_null() {
            None
        } else {
            let t: AffineParams = serde_json::from_str(str_arg(transform_json, "transform_json")?).map_err(PoaError::from)?;
            Some(t)
        };
        let backend = SurrogateBackend::default();
        let request = ClaimRequest {
            contested: Contested::Latent(contested),
            identity: ref_arg(identity, "identity")?.0.clone(),
            kappa: ref_arg(kappa, "kappa")?.0.clone(),
            alpha,
            delta,
            transform,
            backend: backend.selector(),
        };
        let options = match NonZeroUsize::new(parallelism) {
            Some(parallelism) => AdjudicatorOptions { parallelism },
            None => AdjudicatorOptions::default(),
        };
        let report = adjudicator::adjudicate(&request, &backend, &options)?;
        *out = Box::into_raw(Box::new(PoaReport(report)));
        Ok(())
    })
}

/// Canonical JSON of the report; release with [`poa_string_free`].
///
/// # Safety
/// `report` is live and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn poa_report_json(report: *const PoaReport, out: *mut *mut c_char) -> PoaStatus {
    guard(|| {
        let report = ref_arg(report, "report")?;
        let out = out_arg(out, "out")?;
        *out = CString::new(report.0.to_canonical_json())
            .map_err(|_| invalid("report contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// Judge at `p_r`: `accept` is set iff `q_hat + alpha <= p_r`.
///
/// # Safety
/// `report` is live and `accept` is writable.
#[no_mangle]
pub unsafe extern "C" fn poa_report_judge(report: *const PoaReport, p_r: f64, accept: *mut bool) -> PoaStatus {
    guard(|| {
        let report = ref_arg(report, "report")?;
        let accept = out_arg(accept, "accept")?;
        *accept = adjudicator::judge(&report.0, p_r)?.accept;
        Ok(())
    })
}

/// Reads `q_hat` and `T` from a report.
///
/// # Safety
/// `report` is live; each out pointer is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn poa_report_scores(report: *const PoaReport, q_hat: *mut f64, t_score: *mut f64) -> PoaStatus {
    guard(|| {
        let report = ref_arg(report, "report")?;
        if let Some(q) = q_hat.as_mut() {
            *q = report.0.q_hat;
        }
        if let Some(t) = t_score.as_mut() {
            *t = report.0.t_score;
        }
        Ok(())
    })
}

/// # Safety
/// `report` is NULL or came from [`poa_adjudicate_surrogate`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn poa_report_free(report: *mut PoaReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` is NULL or a string returned by this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn poa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = poa_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn version_is_crate_version() {
        let v = unsafe { CStr::from_ptr(poa_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn null_out_pointer() {
        let status = unsafe { poa_required_samples(0.5, 0.5, ptr::null_mut()) };
        assert_eq!(status, PoaStatus::NullPointer);
        assert!(last_error().contains("out"));
    }

    #[test]
    fn domain_error_sets_message_and_ok_clears_it() {
        let mut n = 0usize;
        assert_eq!(unsafe { poa_required_samples(1.5, 0.1, &mut n) }, PoaStatus::DomainError);
        assert!(last_error().contains("alpha"));
        assert_eq!(unsafe { poa_required_samples(2f64.powi(-10), 1e-3, &mut n) }, PoaStatus::Ok);
        assert_eq!(n, 332);
        assert!(poa_last_error().is_null());
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&PoaError::DegenerateSample), PoaStatus::FitError);
        assert_eq!(status_of(&PoaError::Transport("x".into())), PoaStatus::BackendError);
        assert_eq!(status_of(&PoaError::InconsistentReport("x".into())), PoaStatus::InconsistentReport);
    }
}
