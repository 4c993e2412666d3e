use std::ffi::{c_char, CStr, CString};
use std::ptr;
use std::sync::OnceLock;

use lsv_renewal::function_space::{Observable, YProfile};
use lsv_renewal::induced::{InducedParams, InducedSystem};
use lsv_renewal::interval_maps::{LsvMap, RoofKind, RoofPreset};
use lsv_renewal::monte_carlo::mc_correlation;
use lsv_renewal::renewal::{rho_hat, RenewalContext};
use lsv_renewal_ffi::*;
use num_complex::Complex64;

struct Handle(*mut LsvSystem);

unsafe impl Send for Handle {}
unsafe impl Sync for Handle {}

const N_MAX: usize = 400;
const N_Y: usize = 32;

fn handle() -> *const LsvSystem {
    static H: OnceLock<Handle> = OnceLock::new();
    H.get_or_init(|| {
        let mut out = ptr::null_mut();
        let st = unsafe { lsv_system_new(0.67, 0, N_MAX, N_Y, &mut out) };
        assert_eq!(st, LsvStatus::Ok, "{}", last_error());
        Handle(out)
    })
    .0
}

fn reference() -> &'static InducedSystem {
    static S: OnceLock<InducedSystem> = OnceLock::new();
    S.get_or_init(|| {
        let params = InducedParams {
            n_max: N_MAX,
            n_y: N_Y,
            ..InducedParams::default()
        };
        InducedSystem::build(
            LsvMap::new(0.67).unwrap(),
            RoofPreset::floored(RoofKind::OnePlusX),
            params,
        )
        .unwrap()
    })
}

fn last_error() -> String {
    let n = unsafe { lsv_last_error(ptr::null_mut(), 0) };
    if n == 0 {
        return String::new();
    }
    let mut buf = vec![0 as c_char; n];
    unsafe { lsv_last_error(buf.as_mut_ptr(), n) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(lsv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_out_pointer_is_reported() {
    let st = unsafe { lsv_system_new(0.67, 0, 100, 16, ptr::null_mut()) };
    assert_eq!(st, LsvStatus::NullPointer);
    assert!(last_error().contains("out is null"));
    let st = unsafe { lsv_system_info(ptr::null(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, LsvStatus::NullPointer);
}

#[test]
fn bad_arguments_map_to_status_codes() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { lsv_system_new(-1.0, 0, 100, 16, &mut out) },
        LsvStatus::InvalidArgument
    );
    assert!(out.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { lsv_system_new(0.5, 7, 100, 16, &mut out) },
        LsvStatus::InvalidArgument
    );
    assert!(last_error().contains("roof code 7"));
    let (mut re, mut im) = (0.0, 0.0);
    let st = unsafe { lsv_rho_hat(handle(), 0, 0, 16, -1.0, 0.0, &mut re, &mut im) };
    assert_eq!(st, LsvStatus::Domain, "{}", last_error());
    let st = unsafe { lsv_rho_hat(handle(), 9, 0, 16, 1.0, 0.0, &mut re, &mut im) };
    assert_eq!(st, LsvStatus::InvalidArgument);
}

#[test]
fn last_error_truncates_to_buffer() {
    let mut out = ptr::null_mut();
    unsafe { lsv_system_new(0.5, 9, 100, 16, &mut out) };
    let full = last_error();
    let mut buf = [1 as c_char; 6];
    let n = unsafe { lsv_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, full.len() + 1);
    let short = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(short, &full[..5]);
}

#[test]
fn free_accepts_null() {
    unsafe { lsv_system_free(ptr::null_mut()) };
}

#[test]
fn system_info_and_eigenvalue() {
    let (mut beta, mut regime) = (0.0, -1);
    assert_eq!(
        unsafe { lsv_system_info(handle(), &mut beta, &mut regime) },
        LsvStatus::Ok
    );
    assert!((beta - 1.0 / 0.67).abs() < 1e-15);
    assert_eq!(regime, 0);
    let (mut re, mut im) = (0.0, 0.0);
    assert_eq!(
        unsafe { lsv_leading_eigenvalue(handle(), 0.0, &mut re, &mut im) },
        LsvStatus::Ok,
        "{}",
        last_error()
    );
    assert!((re - 1.0).abs() < 1e-8 && im.abs() < 1e-8, "λ(0) = {re}{im:+}i");
    assert_eq!(
        unsafe { lsv_leading_eigenvalue(handle(), 0.05, &mut re, &mut im) },
        LsvStatus::Ok,
        "{}",
        last_error()
    );
    assert!(re * re + im * im < 1.0);
}

#[test]
fn rho_hat_matches_library() {
    let s = Complex64::new(0.5, 1.0);
    let (mut re, mut im) = (0.0, 0.0);
    let st = unsafe { lsv_rho_hat(handle(), 2, 1, 32, s.re, s.im, &mut re, &mut im) };
    assert_eq!(st, LsvStatus::Ok, "{}", last_error());
    let ctx = RenewalContext::new(reference(), 32).unwrap();
    let (v, w) = (Observable::new(YProfile::Cos), Observable::new(YProfile::Linear));
    let want = rho_hat(&ctx, s, &ctx.sample(&v), &ctx.sample(&w)).unwrap().value;
    assert_eq!(re.to_bits(), want.re.to_bits());
    assert_eq!(im.to_bits(), want.im.to_bits());
}

#[test]
fn mc_matches_library() {
    let t = [0.0, 5.0, 50.0];
    let (mut est, mut se) = ([0.0; 3], [0.0; 3]);
    let st = unsafe {
        lsv_mc_correlation(
            handle(),
            2,
            1,
            t.as_ptr(),
            3,
            10_000,
            7,
            est.as_mut_ptr(),
            se.as_mut_ptr(),
        )
    };
    assert_eq!(st, LsvStatus::Ok, "{}", last_error());
    let (v, w) = (Observable::new(YProfile::Cos), Observable::new(YProfile::Linear));
    let want = mc_correlation(reference(), &v, &w, &t, 10_000, 7).unwrap();
    assert_eq!(est.to_vec(), want.estimates);
    assert_eq!(se.to_vec(), want.stderr);
    let st = unsafe { lsv_mc_correlation(handle(), 2, 1, ptr::null(), 3, 10, 7, est.as_mut_ptr(), se.as_mut_ptr()) };
    assert_eq!(st, LsvStatus::NullPointer);
}

#[test]
fn experiment_runner() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let bad = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { lsv_run_experiment(bad.as_ptr(), ptr::null(), out.as_ptr()) },
        LsvStatus::Config
    );
    let sub = CString::new("tails").unwrap();
    let cfg = CString::new("alpha = 1.5\n[discretization]\nn_max = 4000\nn_y = 32\n").unwrap();
    let st = unsafe { lsv_run_experiment(sub.as_ptr(), cfg.as_ptr(), out.as_ptr()) };
    assert_eq!(st, LsvStatus::Ok, "{}", last_error());
    assert!(dir.path().join("tails/summary.json").exists());
    let cfg = CString::new("alpha = 1.5\nbogus = 1\n").unwrap();
    assert_eq!(
        unsafe { lsv_run_experiment(sub.as_ptr(), cfg.as_ptr(), out.as_ptr()) },
        LsvStatus::Config
    );
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/lsv_renewal.h");
    for name in [
        "lsv_last_error",
        "lsv_version",
        "lsv_system_new",
        "lsv_system_free",
        "lsv_system_info",
        "lsv_leading_eigenvalue",
        "lsv_rho_hat",
        "lsv_mc_correlation",
        "lsv_run_experiment",
        "LSV_STATUS_CHECKS_FAILED = 8",
        "typedef struct LsvSystem LsvSystem;",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let tmp = std::path::Path::new(env!("CARGO_TARGET_TMPDIR"));
    // target/tmp -> target/<profile>/liblsv_renewal_ffi.a
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let lib = tmp.parent().unwrap().join(profile);
    // cargo test links the rlib only; the archive has to be refreshed
    let mut build = std::process::Command::new(env!("CARGO"));
    build.args(["build", "-p", "lsv-renewal-ffi", "--lib"]);
    if profile == "release" {
        build.arg("--release");
    }
    assert!(build.status().unwrap().success());
    assert!(
        lib.join("liblsv_renewal_ffi.a").exists(),
        "static library not built in {}",
        lib.display()
    );
    let exe = tmp.join("lsv_smoke");
    let status = std::process::Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(lib.join("liblsv_renewal_ffi.a"))
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("beta=0.666667"));
}
