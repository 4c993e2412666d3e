use std::sync::OnceLock;

use lsv_renewal::function_space::{Observable, YProfile};
use lsv_renewal::induced::{InducedParams, InducedSystem};
use lsv_renewal::interval_maps::{LsvMap, RoofKind, RoofPreset};
use lsv_renewal::monte_carlo::{mc_correlation, mc_laplace};
use lsv_renewal::renewal::{rho_at_zero, rho_hat, RenewalContext};
use num_complex::Complex64;

fn build(alpha: f64) -> InducedSystem {
    let params = InducedParams {
        n_max: 4000,
        n_y: 64,
        ..InducedParams::default()
    };
    InducedSystem::build(
        LsvMap::new(alpha).unwrap(),
        RoofPreset::floored(RoofKind::OnePlusX),
        params,
    )
    .unwrap()
}

fn finite() -> &'static InducedSystem {
    static SYS: OnceLock<InducedSystem> = OnceLock::new();
    SYS.get_or_init(|| build(0.67))
}

fn infinite() -> &'static InducedSystem {
    static SYS: OnceLock<InducedSystem> = OnceLock::new();
    SYS.get_or_init(|| build(1.5))
}

fn pair() -> (Observable, Observable) {
    (Observable::new(YProfile::Cos), Observable::new(YProfile::Linear))
}

#[test]
fn time_zero_matches_quadrature() {
    let (v, w) = pair();
    for (sys, seed) in [(finite(), 11), (infinite(), 12)] {
        let ctx = RenewalContext::new(sys, 256).unwrap();
        let exact = rho_at_zero(&ctx, &ctx.sample(&v), &ctx.sample(&w)).unwrap().re;
        let est = mc_correlation(sys, &v, &w, &[0.0], 100_000, seed).unwrap();
        let z = (est.estimates[0] - exact) / est.stderr[0];
        assert!(z.abs() < 3.0, "t = 0: {} vs {exact}, z = {z}", est.estimates[0]);
    }
}

#[test]
fn deterministic_for_fixed_seed() {
    let (v, w) = pair();
    let t = [0.0, 7.5, 60.0];
    let a = mc_correlation(infinite(), &v, &w, &t, 20_000, 21).unwrap();
    let b = mc_correlation(infinite(), &v, &w, &t, 20_000, 21).unwrap();
    for k in 0..t.len() {
        assert_eq!(a.estimates[k].to_bits(), b.estimates[k].to_bits());
        assert_eq!(a.stderr[k].to_bits(), b.stderr[k].to_bits());
    }
    let c = mc_correlation(infinite(), &v, &w, &t, 20_000, 22).unwrap();
    assert_ne!(a.estimates[1], c.estimates[1]);
}

#[test]
fn stderr_scales_as_inverse_sqrt() {
    let (v, w) = pair();
    let t = [0.0, 20.0];
    let small = mc_correlation(finite(), &v, &w, &t, 25_000, 31).unwrap();
    let large = mc_correlation(finite(), &v, &w, &t, 100_000, 32).unwrap();
    for k in 0..t.len() {
        let ratio = small.stderr[k] / large.stderr[k];
        assert!((ratio / 2.0 - 1.0).abs() < 0.2, "t = {}: ratio {ratio}", t[k]);
    }
}

#[test]
fn laplace_estimator_matches_rho_hat() {
    let (v, w) = pair();
    let sys = finite();
    let ctx = RenewalContext::new(sys, 128).unwrap();
    let (gv, gw) = (ctx.sample(&v), ctx.sample(&w));
    let s = [Complex64::new(0.5, 0.0), Complex64::new(0.5, 1.0)];
    let est = mc_laplace(sys, &v, &w, &s, 40.0, 100_000, 41).unwrap();
    for (k, &z) in s.iter().enumerate() {
        let exact = rho_hat(&ctx, z, &gv, &gw).unwrap().value;
        let (se_re, se_im) = est.stderr[k];
        let d = est.estimates[k] - exact;
        assert!(est.truncation[k] < 1e-6);
        assert!(
            d.re.abs() < 3.0 * se_re + est.truncation[k],
            "s = {z}: {} vs {exact}",
            est.estimates[k]
        );
        assert!(
            d.im.abs() < 3.0 * se_im.max(1e-12) + est.truncation[k],
            "s = {z}: {} vs {exact}",
            est.estimates[k]
        );
    }
}

#[test]
fn csv_has_header_and_rows() {
    let (v, w) = pair();
    let est = mc_correlation(finite(), &v, &w, &[0.0, 1.0], 10_000, 51).unwrap();
    let mut buf = Vec::new();
    est.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "t,rho,stderr,N,seed");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].ends_with(",10000,51"));
    assert_eq!(est.to_curve().points().len(), 2);
}
