//! C ABI over `erm-anatomy`.
//!
//! Every fallible function returns an [`ErmStatus`]; on failure the message is
//! available from [`erm_last_error`] on the same thread until the next call.
//! Networks are opaque [`ErmNet`] handles owned by the caller and released with
//! [`erm_net_free`]. Strings returned through `char **` out-parameters are
//! released with [`erm_string_free`]. Arrays are passed as pointer plus length;
//! sample inputs are row-major `n x d`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use erm_anatomy::bounds::{overall_bound_main, BoundInputs};
use erm_anatomy::data::Sample;
use erm_anatomy::harness::{parse_config, run};
use erm_anatomy::net::{Architecture, ClippedNet, ParamVector};
use erm_anatomy::report::to_json_string;
use erm_anatomy::risk::{empirical_risk, generalized_gradient};
use erm_anatomy::special;
use erm_anatomy::Error;

/// Status codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErmStatus {
    Ok = 0,
    NullPointer = 1,
    InputContract = 2,
    Domain = 3,
    Capability = 4,
    Config = 5,
    Hypothesis = 6,
    NoFeasibleCheckpoint = 7,
    Reproducibility = 8,
    Io = 9,
    InvalidUtf8 = 10,
    Panic = 11,
}

/// Opaque network handle.
pub struct ErmNet {
    net: ClippedNet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ErmStatus {
    match e {
        Error::InputContract(_) => ErmStatus::InputContract,
        Error::Domain(_) => ErmStatus::Domain,
        Error::NoFeasibleCheckpoint { .. } => ErmStatus::NoFeasibleCheckpoint,
        Error::Reproducibility(_) => ErmStatus::Reproducibility,
        Error::Capability(_) => ErmStatus::Capability,
        Error::Config(_) | Error::Json(_) | Error::Csv(_) => ErmStatus::Config,
        Error::Hypothesis(_) => ErmStatus::Hypothesis,
        Error::Io(_) => ErmStatus::Io,
    }
}

struct Fail(ErmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ErmStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `body`, mapping errors and panics to a status and the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> ErmStatus {
    let outcome = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Fail(ErmStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            ErmStatus::Ok
        }
        Err(Fail(status, msg)) => {
            set_last_error(msg);
            status
        }
    }
}

/// # Safety
/// `ptr` must be NULL or point to `len` readable values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string.
unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| Fail(ErmStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// # Safety
/// `out` must be NULL or writable.
unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

/// # Safety
/// See [`slice`].
unsafe fn samples(xs: *const f64, ys: *const f64, n: usize, d: usize) -> Result<Vec<Sample>, Fail> {
    let xs = slice(xs, n * d, "xs")?;
    let ys = slice(ys, n, "ys")?;
    Ok(xs.chunks(d.max(1)).zip(ys).map(|(x, &y)| Sample { x: x.to_vec(), y }).collect())
}

/// # Safety
/// `handle` must be NULL or a live handle from [`erm_net_new`].
unsafe fn net_ref<'a>(handle: *const ErmNet) -> Result<&'a ClippedNet, Fail> {
    handle.as_ref().map(|h| &h.net).ok_or_else(|| null("net"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn erm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn erm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a clipped network with layer widths `widths[0..len]` and output range `[u, v]`.
///
/// # Safety
/// `widths` must point to `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn erm_net_new(widths: *const usize, len: usize, u: f64, v: f64, out: *mut *mut ErmNet) -> ErmStatus {
    guard(|| {
        let widths = slice(widths, len, "widths")?.to_vec();
        let net = ClippedNet::new(Architecture::new(widths)?, u, v)?;
        write(out, Box::into_raw(Box::new(ErmNet { net })), "out")
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `handle` must be NULL or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn erm_net_free(handle: *mut ErmNet) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of parameters, or 0 for a NULL handle.
///
/// # Safety
/// `handle` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn erm_net_param_count(handle: *const ErmNet) -> usize {
    handle.as_ref().map_or(0, |h| h.net.param_count())
}

/// Scalar output of the network at `x`.
///
/// # Safety
/// Pointers must be valid for the given lengths; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn erm_net_forward(
    handle: *const ErmNet,
    theta: *const f64,
    theta_len: usize,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
) -> ErmStatus {
    guard(|| {
        let net = net_ref(handle)?;
        let theta = ParamVector::new(slice(theta, theta_len, "theta")?.to_vec())?;
        let y = net.forward_scalar(&theta, slice(x, x_len, "x")?)?;
        write(out, y, "out")
    })
}

/// Mean squared residual over `n` samples (`xs` row-major `n x d`, `d` the input width).
///
/// # Safety
/// Pointers must be valid for the implied lengths; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn erm_empirical_risk(
    handle: *const ErmNet,
    theta: *const f64,
    theta_len: usize,
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out: *mut f64,
) -> ErmStatus {
    guard(|| {
        let net = net_ref(handle)?;
        let theta = ParamVector::new(slice(theta, theta_len, "theta")?.to_vec())?;
        let batch = samples(xs, ys, n, net.arch().input_dim())?;
        write(out, empirical_risk(net, &theta, &batch)?, "out")
    })
}

/// Generalized gradient of the empirical risk, written to `grad[0..grad_len]`.
///
/// # Safety
/// Pointers must be valid for the implied lengths; `grad` writable for `grad_len` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn erm_gradient(
    handle: *const ErmNet,
    theta: *const f64,
    theta_len: usize,
    xs: *const f64,
    ys: *const f64,
    n: usize,
    grad: *mut f64,
    grad_len: usize,
) -> ErmStatus {
    guard(|| {
        let net = net_ref(handle)?;
        let theta = ParamVector::new(slice(theta, theta_len, "theta")?.to_vec())?;
        let batch = samples(xs, ys, n, net.arch().input_dim())?;
        let g = generalized_gradient(net, &theta, &batch)?;
        if grad.is_null() {
            return Err(null("grad"));
        }
        if grad_len != g.len() {
            return Err(Fail(ErmStatus::InputContract, format!("grad_len {grad_len} differs from {}", g.len())));
        }
        std::slice::from_raw_parts_mut(grad, grad_len).copy_from_slice(&g);
        Ok(())
    })
}

/// `ln Gamma(x)` for `x > 0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn erm_ln_gamma(x: f64, out: *mut f64) -> ErmStatus {
    guard(|| write(out, special::ln_gamma(x)?, "out"))
}

/// `B(x, y)` for `x, y > 0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn erm_beta(x: f64, y: f64, out: *mut f64) -> ErmStatus {
    guard(|| write(out, special::beta(x, y)?, "out"))
}

/// Both displays of the main bound for bound inputs given as JSON; the result
/// is a JSON array `[fine, coarse]`.
///
/// # Safety
/// `inputs_json` must be a NUL-terminated string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn erm_bound_main(inputs_json: *const c_char, strict: c_int, out_json: *mut *mut c_char) -> ErmStatus {
    guard(|| {
        let inputs: BoundInputs =
            serde_json::from_str(text(inputs_json, "inputs_json")?).map_err(|e| Fail(ErmStatus::Config, e.to_string()))?;
        let (fine, coarse) = overall_bound_main(&inputs, strict != 0)?;
        write(out_json, to_c_string(to_json_string(&[fine, coarse])?), "out_json")
    })
}

/// Runs an experiment config (JSON) and returns the report JSON. `passed`
/// receives 1 when the report has no failures, else 0.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_json` and `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn erm_run_experiment(
    config_json: *const c_char,
    out_json: *mut *mut c_char,
    passed: *mut c_int,
) -> ErmStatus {
    guard(|| {
        if out_json.is_null() || passed.is_null() {
            return Err(null("out_json or passed"));
        }
        let report = run(&parse_config(text(config_json, "config_json")?)?)?;
        write(passed, c_int::from(report.passed), "passed")?;
        write(out_json, to_c_string(to_json_string(&report)?), "out_json")
    })
}

/// Releases a string returned by this library; NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string from this library not freed before.
#[no_mangle]
pub unsafe extern "C" fn erm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
