//! C ABI over the `evodpo` library.
//!
//! Every function returns an [`EvodpoStatus`] code; `EVODPO_OK` is zero.
//! After a failure, [`evodpo_last_error`] returns a message for the calling
//! thread. Configs and runs are opaque handles released with their `_free`
//! function; strings handed out are released with [`evodpo_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use evodpo::cli::{ledger_csv, lemmas_json, phases_csv, run_seed, SeedOutput};
use evodpo::config::{parse_config, RunConfig};
use evodpo::evodpo::{gate, GateDecision, PhaseConfig};
use evodpo::policy::{gibbs, kl};
use evodpo::verify::{verify_lemmas, VerifyPlan};
use evodpo::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvodpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Support = 4,
    Convergence = 5,
    Config = 6,
    Io = 7,
    Utf8 = 8,
    Internal = 9,
    Panic = 10,
}

impl From<&Error> for EvodpoStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } => Self::DimensionMismatch,
            Error::InvalidArgument(_) | Error::Empty(_) => Self::InvalidArgument,
            Error::Support { .. } => Self::Support,
            Error::Convergence { .. } => Self::Convergence,
            Error::Config { .. } => Self::Config,
            Error::Io { .. } => Self::Io,
            _ => Self::Internal,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard<F: FnOnce() -> Result<(), (EvodpoStatus, String)>>(f: F) -> EvodpoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvodpoStatus::Ok,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            EvodpoStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (EvodpoStatus, String) {
    (EvodpoStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (EvodpoStatus, String) {
    (EvodpoStatus::NullPointer, format!("{what} is null"))
}

fn to_c_string(s: String) -> Result<*mut c_char, (EvodpoStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (EvodpoStatus::Internal, "string contains NUL".into()))
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn evodpo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn evodpo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Trust-region gate: writes 1 to `out_accept` iff `delta_s >= eps_s` and
/// `kl_hat <= delta_h`, else 0.
///
/// # Safety
/// `out_accept` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evodpo_gate(
    delta_s: f64,
    kl_hat: f64,
    eps_s: f64,
    delta_h: f64,
    out_accept: *mut i32,
) -> EvodpoStatus {
    guard(|| {
        if out_accept.is_null() {
            return Err(null("out_accept"));
        }
        let cfg = PhaseConfig {
            eps_s,
            delta_h,
            ..PhaseConfig::default()
        };
        cfg.validate().map_err(lib_err)?;
        *out_accept = i32::from(gate(delta_s, kl_hat, &cfg) == GateDecision::Accept);
        Ok(())
    })
}

/// `out[i] ∝ pi_ref[i]·exp(u[i]/beta)` over `k` actions.
///
/// # Safety
/// `pi_ref` and `u` must be readable and `out` writable for `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn evodpo_gibbs(
    pi_ref: *const f64,
    u: *const f64,
    k: usize,
    beta: f64,
    out: *mut f64,
) -> EvodpoStatus {
    guard(|| {
        if pi_ref.is_null() || u.is_null() || out.is_null() {
            return Err(null("pi_ref, u or out"));
        }
        let p = gibbs(slice::from_raw_parts(pi_ref, k), slice::from_raw_parts(u, k), beta).map_err(lib_err)?;
        slice::from_raw_parts_mut(out, k).copy_from_slice(&p);
        Ok(())
    })
}

/// `KL(p ‖ q)` over `k` actions.
///
/// # Safety
/// `p` and `q` must be readable for `k` doubles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn evodpo_kl(p: *const f64, q: *const f64, k: usize, out: *mut f64) -> EvodpoStatus {
    guard(|| {
        if p.is_null() || q.is_null() || out.is_null() {
            return Err(null("p, q or out"));
        }
        *out = kl(slice::from_raw_parts(p, k), slice::from_raw_parts(q, k)).map_err(lib_err)?;
        Ok(())
    })
}

/// Opaque run configuration.
pub struct EvodpoConfig(RunConfig);

/// Opaque result of one seeded run.
pub struct EvodpoRun(SeedOutput);

/// Parses `key = value` config text (NUL-terminated UTF-8). An empty string
/// gives the defaults.
///
/// # Safety
/// `text` must be a valid C string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evodpo_config_parse(text: *const c_char, out: *mut *mut EvodpoConfig) -> EvodpoStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return Err(null("text or out"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| (EvodpoStatus::Utf8, e.to_string()))?;
        let cfg = parse_config(s).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EvodpoConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`evodpo_config_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn evodpo_config_free(cfg: *mut EvodpoConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured mode for one seed.
///
/// # Safety
/// `cfg` must be a live config handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evodpo_run(cfg: *const EvodpoConfig, seed: u64, out: *mut *mut EvodpoRun) -> EvodpoStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return Err(null("cfg or out"));
        }
        let o = run_seed(&(*cfg).0, seed).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EvodpoRun(o)));
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`evodpo_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn evodpo_run_free(run: *mut EvodpoRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Final metric of the run: cumulative regret, NMR, or share of passed
/// lemma checks depending on the mode.
///
/// # Safety
/// `run` must be a live run handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evodpo_run_final_metric(run: *const EvodpoRun, out: *mut f64) -> EvodpoStatus {
    guard(|| {
        if run.is_null() || out.is_null() {
            return Err(null("run or out"));
        }
        *out = (*run).0.final_metric;
        Ok(())
    })
}

/// Per-step ledger CSV; an empty string for modes without a ledger.
///
/// # Safety
/// `run` must be a live run handle and `out` valid for writes. Free the
/// result with [`evodpo_string_free`].
#[no_mangle]
pub unsafe extern "C" fn evodpo_run_ledger_csv(run: *const EvodpoRun, out: *mut *mut c_char) -> EvodpoStatus {
    guard(|| {
        if run.is_null() || out.is_null() {
            return Err(null("run or out"));
        }
        let body = (*run).0.ledger.as_ref().map(ledger_csv).unwrap_or_default();
        *out = to_c_string(body)?;
        Ok(())
    })
}

/// Per-phase CSV (header only when the mode has no phases).
///
/// # Safety
/// As for [`evodpo_run_ledger_csv`].
#[no_mangle]
pub unsafe extern "C" fn evodpo_run_phases_csv(run: *const EvodpoRun, out: *mut *mut c_char) -> EvodpoStatus {
    guard(|| {
        if run.is_null() || out.is_null() {
            return Err(null("run or out"));
        }
        *out = to_c_string(phases_csv(&(*run).0.phases))?;
        Ok(())
    })
}

/// Runs the default lemma checks for `seed` and returns their reports as a
/// JSON array.
///
/// # Safety
/// `out` must be valid for writes. Free the result with
/// [`evodpo_string_free`].
#[no_mangle]
pub unsafe extern "C" fn evodpo_verify_json(seed: u64, out: *mut *mut c_char) -> EvodpoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let reports = verify_lemmas(&VerifyPlan::default(), seed).map_err(lib_err)?;
        *out = to_c_string(lemmas_json(&reports).map_err(lib_err)?)?;
        Ok(())
    })
}
