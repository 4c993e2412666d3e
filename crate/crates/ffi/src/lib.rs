//! C ABI over `lsv_renewal`.
//!
//! Every fallible entry point returns an [`LsvStatus`]; on failure the message
//! is kept per thread and read back with [`lsv_last_error`]. Systems are opaque
//! handles created by [`lsv_system_new`] and released by [`lsv_system_free`].
//! Panics are caught at the boundary and reported as [`LsvStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lsv_renewal::config::ExperimentConfig;
use lsv_renewal::error::Error;
use lsv_renewal::function_space::{Observable, YProfile};
use lsv_renewal::harness::{self, Subcommand};
use lsv_renewal::induced::{InducedParams, InducedSystem, Regime};
use lsv_renewal::interval_maps::{LsvMap, RoofKind, RoofPreset};
use lsv_renewal::monte_carlo::mc_correlation;
use lsv_renewal::renewal::{rho_hat, RenewalContext};
use lsv_renewal::transfer::eig_continuation;
use num_complex::Complex64;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Orbit or frequency outside the domain of the operation.
    Domain = 3,
    /// Convergence failure, near-singular solve, lost eigenvalue branch.
    Numerical = 4,
    /// The call needs a different regime (e.g. `β > 1`).
    Regime = 5,
    Config = 6,
    Io = 7,
    /// An experiment ran to completion but one of its checks failed.
    ChecksFailed = 8,
    Panic = 9,
}

/// Opaque induced system.
pub struct LsvSystem {
    inner: InducedSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> LsvStatus {
    match err {
        Error::Domain(_) | Error::LeftHalfPlane(_) => LsvStatus::Domain,
        Error::InvalidArgument(_) | Error::Sampling(_) | Error::FitWindow(_) => LsvStatus::InvalidArgument,
        Error::Convergence { .. }
        | Error::SignChange(_)
        | Error::BranchLoss { .. }
        | Error::StepUnderflow { .. }
        | Error::NearSingular { .. }
        | Error::TruncationTooSmall(_) => LsvStatus::Numerical,
        Error::Regime(_) => LsvStatus::Regime,
        Error::Config(_) | Error::Cache(_) => LsvStatus::Config,
        Error::Io(_) => LsvStatus::Io,
        Error::Operation { source, .. } => status_of(source),
    }
}

/// Runs `f`, translating errors and panics into a status and the last-error slot.
fn guard(f: impl FnOnce() -> Result<LsvStatus, Failure>) -> LsvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LsvStatus::Panic
        }
    }
}

struct Failure(LsvStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LsvStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(LsvStatus::InvalidArgument, msg.into())
}

unsafe fn system<'a>(ptr: *const LsvSystem) -> Result<&'a InducedSystem, Failure> {
    ptr.as_ref().map(|s| &s.inner).ok_or_else(|| null("system"))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn write<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

fn roof(code: c_int) -> Result<RoofKind, Failure> {
    match code {
        0 => Ok(RoofKind::OnePlusX),
        1 => Ok(RoofKind::TwoPlusCos),
        2 => Ok(RoofKind::Const),
        _ => Err(invalid(format!("unknown roof code {code}"))),
    }
}

fn profile(code: c_int) -> Result<Observable, Failure> {
    let p = match code {
        0 => YProfile::One,
        1 => YProfile::Linear,
        2 => YProfile::Cos,
        3 => YProfile::Oscillating,
        _ => return Err(invalid(format!("unknown profile code {code}"))),
    };
    Ok(Observable::new(p))
}

/// Copies the calling thread's last error message into `buf` (NUL terminated,
/// truncated to `len`) and returns the full length including the NUL, or 0 if
/// no error has been recorded. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lsv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lsv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds the induced system of the LSV map with parameter `alpha` and the
/// floored roof preset `roof` (0 `1+x`, 1 `2+cos`, 2 constant).
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn lsv_system_new(
    alpha: f64,
    roof_code: c_int,
    n_max: usize,
    n_y: usize,
    out: *mut *mut LsvSystem,
) -> LsvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let map = LsvMap::new(alpha)?;
        let params = InducedParams {
            n_max,
            n_y,
            ..InducedParams::default()
        };
        let inner = InducedSystem::build(map, RoofPreset::floored(roof(roof_code)?), params)?;
        out.write(Box::into_raw(Box::new(LsvSystem { inner })));
        Ok(LsvStatus::Ok)
    })
}

/// Releases a handle from [`lsv_system_new`]; null is ignored.
///
/// # Safety
/// `sys` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsv_system_free(sys: *mut LsvSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// `β = 1/α` and the regime (0 finite, 1 infinite, 2 boundary).
///
/// # Safety
/// `sys` must be a live handle; `beta` and `regime` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lsv_system_info(sys: *const LsvSystem, beta: *mut f64, regime: *mut c_int) -> LsvStatus {
    guard(|| {
        let s = system(sys)?;
        let code = match s.regime() {
            Regime::Finite => 0,
            Regime::Infinite => 1,
            Regime::Boundary => 2,
        };
        write(beta, s.beta(), "beta")?;
        write(regime, code, "regime")?;
        Ok(LsvStatus::Ok)
    })
}

/// Leading eigenvalue `λ(ib)` of the twisted transfer operator, continued from `s = 0`.
///
/// # Safety
/// `sys` must be a live handle; `re` and `im` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lsv_leading_eigenvalue(
    sys: *const LsvSystem,
    b: f64,
    re: *mut f64,
    im: *mut f64,
) -> LsvStatus {
    guard(|| {
        let s = system(sys)?;
        if !b.is_finite() {
            return Err(invalid("b must be finite"));
        }
        let steps = (b.abs() / 0.01).ceil().max(1.0) as usize;
        let path: Vec<Complex64> = match b == 0.0 {
            true => vec![Complex64::new(0.0, 0.0)],
            false => (0..=steps)
                .map(|k| Complex64::new(0.0, b * k as f64 / steps as f64))
                .collect(),
        };
        let lambda = eig_continuation(s, &path)?
            .last()
            .map(|d| d.lambda)
            .ok_or_else(|| invalid("empty path"))?;
        write(re, lambda.re, "re")?;
        write(im, lambda.im, "im")?;
        Ok(LsvStatus::Ok)
    })
}

/// Laplace transform `ρ̂_{v,w}(s)` of the correlation through the renewal
/// identity, with `n_u` fiber intervals. `v` and `w` are profile codes
/// (0 one, 1 `2y`, 2 `1+cos(2πy)/2`, 3 `cos(4πy)`).
///
/// # Safety
/// `sys` must be a live handle; `re` and `im` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lsv_rho_hat(
    sys: *const LsvSystem,
    v: c_int,
    w: c_int,
    n_u: usize,
    s_re: f64,
    s_im: f64,
    re: *mut f64,
    im: *mut f64,
) -> LsvStatus {
    guard(|| {
        let s = system(sys)?;
        let (v, w) = (profile(v)?, profile(w)?);
        let ctx = RenewalContext::new(s, n_u)?;
        let value = rho_hat(&ctx, Complex64::new(s_re, s_im), &ctx.sample(&v), &ctx.sample(&w))?.value;
        write(re, value.re, "re")?;
        write(im, value.im, "im")?;
        Ok(LsvStatus::Ok)
    })
}

/// Monte Carlo estimate of `ρ_{v,w}(t)` at `n_times` times with `samples`
/// orbits; `estimates` and `stderr` receive `n_times` values each.
///
/// # Safety
/// `sys` must be a live handle; `times`, `estimates`, `stderr` must hold `n_times` elements.
#[no_mangle]
pub unsafe extern "C" fn lsv_mc_correlation(
    sys: *const LsvSystem,
    v: c_int,
    w: c_int,
    times: *const f64,
    n_times: usize,
    samples: usize,
    seed: u64,
    estimates: *mut f64,
    stderr: *mut f64,
) -> LsvStatus {
    guard(|| {
        let s = system(sys)?;
        let (v, w) = (profile(v)?, profile(w)?);
        let t = slice(times, n_times, "times")?;
        let est_out = slice_mut(estimates, n_times, "estimates")?;
        let se_out = slice_mut(stderr, n_times, "stderr")?;
        let est = mc_correlation(s, &v, &w, t, samples, seed)?;
        est_out.copy_from_slice(&est.estimates);
        se_out.copy_from_slice(&est.stderr);
        Ok(LsvStatus::Ok)
    })
}

/// Runs a CLI subcommand (`"tails"`, `"mix-finite"`, ...) with a TOML config
/// (null or empty for the α = 1.5 defaults), writing artifacts under `out_dir`.
/// Returns `ChecksFailed` when the run completes with a failed check.
///
/// # Safety
/// `subcommand` and `out_dir` must be NUL-terminated strings; `config_toml` null or one.
#[no_mangle]
pub unsafe extern "C" fn lsv_run_experiment(
    subcommand: *const c_char,
    config_toml: *const c_char,
    out_dir: *const c_char,
) -> LsvStatus {
    guard(|| {
        let sub = Subcommand::parse(text(subcommand, "subcommand")?)
            .map_err(|e| Failure(LsvStatus::Config, e.to_string()))?;
        let cfg = match config_toml.is_null() {
            true => ExperimentConfig::for_alpha(1.5),
            false => match text(config_toml, "config")? {
                "" => ExperimentConfig::for_alpha(1.5),
                t => ExperimentConfig::from_toml(t),
            },
        }
        .map_err(|e| Failure(LsvStatus::Config, e.to_string()))?;
        let out = Path::new(text(out_dir, "out_dir")?);
        let summary = harness::run(sub, &cfg, out)?;
        if summary.passed {
            Ok(LsvStatus::Ok)
        } else {
            let failed: Vec<_> = summary
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            Err(Failure(
                LsvStatus::ChecksFailed,
                format!("failed checks: {}", failed.join(", ")),
            ))
        }
    })
}
