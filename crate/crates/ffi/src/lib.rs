//! C ABI over the privacy primitives of `expertdp`.
//!
//! Every function returns an [`EdpStatus`]; results go through out-pointers.
//! On failure the thread's last error message is set and can be read with
//! [`edp_last_error_message`]. Handles are opaque and must be released with
//! their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use expertdp::experts::ExpertEnsemble;
use expertdp::mdp::{Prefix, State};
use expertdp::privacy::{self, ReleaseParams};
use expertdp::release::count_prefix;
use expertdp::rng::Stream;
use expertdp::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdpStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    BudgetViolation = 3,
    VerificationFailed = 4,
    Io = 5,
    Panic = 6,
}

/// Derived per-iteration release parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdpReleaseParams {
    pub eps1: f64,
    pub delta1: f64,
    pub eps_prime: f64,
    pub delta_prime: f64,
    pub c_min: f64,
    pub theta: f64,
    pub t: u64,
    pub l: u64,
    pub p_min: f64,
}

impl From<ReleaseParams> for EdpReleaseParams {
    fn from(p: ReleaseParams) -> Self {
        Self {
            eps1: p.eps1,
            delta1: p.delta1,
            eps_prime: p.eps_prime,
            delta_prime: p.delta_prime,
            c_min: p.c_min,
            theta: p.theta,
            t: p.t as u64,
            l: p.l as u64,
            p_min: p.p_min,
        }
    }
}

impl From<&EdpReleaseParams> for ReleaseParams {
    fn from(p: &EdpReleaseParams) -> Self {
        Self {
            eps1: p.eps1,
            delta1: p.delta1,
            eps_prime: p.eps_prime,
            delta_prime: p.delta_prime,
            c_min: p.c_min,
            theta: p.theta,
            t: p.t as usize,
            l: p.l as usize,
            p_min: p.p_min,
        }
    }
}

/// A loaded expert ensemble.
pub struct EdpEnsemble {
    inner: ExpertEnsemble,
}

/// A seeded random stream.
pub struct EdpRng {
    inner: Stream,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> EdpStatus {
    match err {
        Error::BudgetViolation(_) => EdpStatus::BudgetViolation,
        Error::Verification(_) => EdpStatus::VerificationFailed,
        Error::Io { .. } | Error::Json(_) => EdpStatus::Io,
        _ => EdpStatus::InvalidArgument,
    }
}

struct Fail(EdpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(EdpStatus::NullPointer, format!("`{name}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EdpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EdpStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, name: &str, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn edp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Derives the release parameters for budget `(eps1, delta1)` over `t`
/// trajectories of horizon `l` with action floor `p_min`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `EdpReleaseParams`.
#[no_mangle]
pub unsafe extern "C" fn edp_derive_release_params(
    eps1: f64,
    delta1: f64,
    t: u64,
    l: u64,
    p_min: f64,
    out: *mut EdpReleaseParams,
) -> EdpStatus {
    guard(|| {
        let p = privacy::derive_release_params(eps1, delta1, t as usize, l as usize, p_min)?;
        write(out, "out", p.into())
    })
}

/// Advanced composition of `k` `(eps, delta)` mechanisms with slack `delta_slack`.
///
/// # Safety
/// `out_eps` and `out_delta` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn edp_advanced_composition(
    k: u64,
    eps: f64,
    delta: f64,
    delta_slack: f64,
    out_eps: *mut f64,
    out_delta: *mut f64,
) -> EdpStatus {
    guard(|| {
        if !(eps >= 0.0 && delta >= 0.0 && delta_slack > 0.0 && delta_slack < 1.0) {
            return Err(Fail(
                EdpStatus::InvalidArgument,
                "need eps >= 0, delta >= 0 and delta_slack in (0, 1)".into(),
            ));
        }
        let (e, d) = privacy::advanced_composition(k as usize, eps, delta, delta_slack);
        write(out_eps, "out_eps", e)?;
        write(out_delta, "out_delta", d)
    })
}

/// Composes the release's per-trajectory guarantees and checks them
/// against `(eps1, delta1)`. Returns `EDP_STATUS_BUDGET_VIOLATION` if they
/// do not fit; the composed values are written either way.
///
/// # Safety
/// `params` must point to a valid `EdpReleaseParams`; the out-pointers must
/// be null or writable.
#[no_mangle]
pub unsafe extern "C" fn edp_check_release_budget(
    params: *const EdpReleaseParams,
    out_eps: *mut f64,
    out_delta: *mut f64,
) -> EdpStatus {
    guard(|| {
        let p: ReleaseParams = params.as_ref().ok_or_else(|| null("params"))?.into();
        let (e, d) = privacy::advanced_composition(p.t, 2.0 * p.eps_prime, p.delta1 / (2.0 * p.t as f64), p.delta1 / 2.0);
        write(out_eps, "out_eps", e)?;
        write(out_delta, "out_delta", d)?;
        privacy::check_release_budget(&p)?;
        Ok(())
    })
}

/// ε spent by `steps` Poisson-subsampled Gaussian steps at noise multiplier
/// `sigma` and rate `q`, for target `delta`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn edp_dpsgd_epsilon(sigma: f64, q: f64, steps: u64, delta: f64, out: *mut f64) -> EdpStatus {
    guard(|| {
        let e = privacy::dpsgd_epsilon(sigma, q, steps as usize, delta)?;
        write(out, "out", e)
    })
}

/// Smallest noise multiplier meeting `(eps, delta)` over `steps` steps at rate `q`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn edp_calibrate_noise(eps: f64, delta: f64, q: f64, steps: u64, out: *mut f64) -> EdpStatus {
    guard(|| {
        let s = privacy::calibrate_noise(eps, delta, q, steps as usize)?;
        write(out, "out", s)
    })
}

/// Loads an ensemble directory written by `expertdp gen-experts`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn edp_ensemble_load(path: *const c_char, out: *mut *mut EdpEnsemble) -> EdpStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(EdpStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = ExpertEnsemble::load(Path::new(path))?;
        out.write(Box::into_raw(Box::new(EdpEnsemble { inner })));
        Ok(())
    })
}

/// Releases an ensemble handle. Null is ignored.
///
/// # Safety
/// `handle` must come from `edp_ensemble_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn edp_ensemble_free(handle: *mut EdpEnsemble) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be a live ensemble handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn edp_ensemble_len(handle: *const EdpEnsemble, out: *mut usize) -> EdpStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        write(out, "out", h.inner.len())
    })
}

fn cell(ens: &ExpertEnsemble, s: i64) -> Result<State, Fail> {
    if s < 0 {
        return Ok(State::Absorbing);
    }
    let p = &ens.experts[0];
    match p.indexer {
        expertdp::experts::StateIndexer::Tabular { n_states } if (s as usize) < n_states => Ok(State::Cell(s as usize)),
        expertdp::experts::StateIndexer::Tabular { n_states } => Err(Fail(
            EdpStatus::InvalidArgument,
            format!("state {s} outside 0..{n_states}"),
        )),
        _ => Err(Fail(
            EdpStatus::InvalidArgument,
            "only tabular ensembles are exposed over the C interface".into(),
        )),
    }
}

/// `π_expert(action | state)`. A negative `state` names the absorbing state.
///
/// # Safety
/// `handle` must be a live ensemble handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn edp_ensemble_action_prob(
    handle: *const EdpEnsemble,
    expert: usize,
    state: i64,
    action: usize,
    out: *mut f64,
) -> EdpStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if expert >= h.inner.len() || action >= h.inner.action_count() {
            return Err(Fail(EdpStatus::InvalidArgument, "expert or action out of range".into()));
        }
        let s = cell(&h.inner, state)?;
        write(out, "out", h.inner.action_prob(expert, &s, action))
    })
}

/// Prefix count `Σ_i Π_j π_i(actions[j] | states[j])` over `len` steps.
///
/// # Safety
/// `states` and `actions` must each hold `len` elements (either may be null
/// when `len` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn edp_ensemble_count_prefix(
    handle: *const EdpEnsemble,
    states: *const i64,
    actions: *const usize,
    len: usize,
    out: *mut f64,
) -> EdpStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if len > 0 && (states.is_null() || actions.is_null()) {
            return Err(null("states/actions"));
        }
        let (raw_s, acts): (&[i64], &[usize]) = if len == 0 {
            (&[], &[])
        } else {
            (std::slice::from_raw_parts(states, len), std::slice::from_raw_parts(actions, len))
        };
        if acts.iter().any(|&a| a >= h.inner.action_count()) {
            return Err(Fail(EdpStatus::InvalidArgument, "action out of range".into()));
        }
        let st = raw_s.iter().map(|&s| cell(&h.inner, s)).collect::<Result<Vec<_>, _>>()?;
        write(out, "out", count_prefix(&h.inner.experts, Prefix::new(&st, acts)))
    })
}

/// Creates a random stream from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn edp_rng_new(seed: u64, out: *mut *mut EdpRng) -> EdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(Box::into_raw(Box::new(EdpRng {
            inner: expertdp::rng::seeded(seed),
        })));
        Ok(())
    })
}

/// Releases a stream. Null is ignored.
///
/// # Safety
/// `handle` must come from `edp_rng_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn edp_rng_free(handle: *mut EdpRng) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// One `Laplace(0, scale)` draw.
///
/// # Safety
/// `handle` must be a live stream; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn edp_rng_laplace(handle: *mut EdpRng, scale: f64, out: *mut f64) -> EdpStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        let x = privacy::sample_laplace(scale, &mut h.inner)?;
        write(out, "out", x)
    })
}

/// One `N(0, sigma²)` draw.
///
/// # Safety
/// `handle` must be a live stream; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn edp_rng_gaussian(handle: *mut EdpRng, sigma: f64, out: *mut f64) -> EdpStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        let x = privacy::sample_gaussian(sigma, &mut h.inner)?;
        write(out, "out", x)
    })
}
