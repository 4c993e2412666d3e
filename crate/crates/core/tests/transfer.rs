use std::sync::OnceLock;

use lsv_renewal::asymptotics::fit_loglog;
use lsv_renewal::function_space::GridFunction;
use lsv_renewal::induced::{InducedParams, InducedSystem};
use lsv_renewal::interval_maps::{LsvMap, RoofKind, RoofPreset};
use lsv_renewal::transfer::{
    assemble_twisted, eig_continuation, leading_eig, resolve, resolvent_norm_probe, Resolvent,
};
use lsv_renewal::Error;
use num_complex::Complex64;
use proptest::prelude::*;

fn params(n_max: usize, n_y: usize) -> InducedParams {
    InducedParams {
        n_max,
        n_y,
        deep_len: 1 << 18,
        ..InducedParams::default()
    }
}

fn build(alpha: f64) -> InducedSystem {
    InducedSystem::build(
        LsvMap::new(alpha).unwrap(),
        RoofPreset::floored(RoofKind::OnePlusX),
        params(4000, 64),
    )
    .unwrap()
}

fn system_15() -> &'static InducedSystem {
    static SYS: OnceLock<InducedSystem> = OnceLock::new();
    SYS.get_or_init(|| build(1.5))
}

fn system_067() -> &'static InducedSystem {
    static SYS: OnceLock<InducedSystem> = OnceLock::new();
    SYS.get_or_init(|| build(0.67))
}

/// Smooth trigonometric sum with the given coefficients.
fn trig(coef: &[f64], y: f64) -> f64 {
    coef.chunks(2)
        .enumerate()
        .map(|(k, c)| {
            let a = 2.0 * std::f64::consts::PI * k as f64 * y;
            c[0] * a.cos() + c.get(1).copied().unwrap_or(0.0) * a.sin()
        })
        .sum()
}

fn sampled(sys: &InducedSystem, f: impl Fn(f64) -> f64) -> Vec<Complex64> {
    sys.grid().nodes().iter().map(|&y| Complex64::new(f(y), 0.0)).collect()
}

fn fine_sup(f: impl Fn(f64) -> f64) -> f64 {
    (0..=4000)
        .map(|k| f(0.5 + 0.5 * k as f64 / 4000.0).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn duality_at_zero(coef in prop::collection::vec(-1.0f64..1.0, 8)) {
        let sys = system_15();
        let m = assemble_twisted(sys, Complex64::new(0.0, 0.0)).unwrap();
        let g = sampled(sys, |y| trig(&coef, y));
        let lhs = m.mu_integral(&m.apply(&g));
        let rhs = m.mu_integral(&g);
        prop_assert!((lhs - rhs).norm() <= 1e-8, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn positivity_at_zero(coef in prop::collection::vec(-1.0f64..1.0, 8)) {
        let sys = system_15();
        let m = assemble_twisted(sys, Complex64::new(0.0, 0.0)).unwrap();
        let g = sampled(sys, |y| trig(&coef, y).powi(2));
        for z in m.apply(&g) {
            prop_assert!(z.re >= -1e-8 && z.im.abs() < 1e-14);
        }
    }

    #[test]
    fn sup_norm_contraction_on_imaginary_axis(coef in prop::collection::vec(-1.0f64..1.0, 8), b in 0.01f64..20.0) {
        let sys = system_15();
        let m = assemble_twisted(sys, Complex64::new(0.0, b)).unwrap();
        let g = sampled(sys, |y| trig(&coef, y));
        let sup_in = fine_sup(|y| trig(&coef, y));
        let sup_out = m.apply(&g).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(sup_out <= sup_in * (1.0 + 1e-8), "{} > {}", sup_out, sup_in);
    }
}

#[test]
fn contraction_example_b_03() {
    let sys = system_15();
    let m = assemble_twisted(sys, Complex64::new(0.0, 0.3)).unwrap();
    for seed in 0..10u64 {
        let coef: Vec<f64> = (0..8).map(|k| ((seed * 8 + k) as f64 * 0.7368).sin()).collect();
        let g = sampled(sys, |y| trig(&coef, y));
        let sup_out = m.apply(&g).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(sup_out <= fine_sup(|y| trig(&coef, y)));
    }
}

#[test]
fn conjugate_eigenvalues() {
    let sys = system_15();
    let s = Complex64::new(0.1, 0.4);
    let a = leading_eig(&assemble_twisted(sys, s).unwrap(), None).unwrap();
    let b = leading_eig(&assemble_twisted(sys, s.conj()).unwrap(), None).unwrap();
    assert!((a.lambda.conj() - b.lambda).norm() < 1e-10);
}

#[test]
fn continuation_is_continuous() {
    // finite regime: λ(ib) is differentiable at 0, so the first step is not a cusp
    let sys = system_067();
    let path: Vec<Complex64> = (0..=50).map(|k| Complex64::new(0.0, 0.01 * k as f64)).collect();
    let out = eig_continuation(sys, &path).unwrap();
    assert_eq!(out.len(), 51);
    let max_jump = out
        .windows(2)
        .map(|w| (w[1].lambda - w[0].lambda).norm())
        .fold(0.0, f64::max);
    assert!(max_jump < 0.1, "max jump {max_jump}");
    // halving the step roughly halves the largest jump
    let fine: Vec<Complex64> = (0..=100).map(|k| Complex64::new(0.0, 0.005 * k as f64)).collect();
    let out2 = eig_continuation(sys, &fine).unwrap();
    let max_jump2 = out2
        .windows(2)
        .map(|w| (w[1].lambda - w[0].lambda).norm())
        .fold(0.0, f64::max);
    assert!(max_jump2 < 0.7 * max_jump && max_jump2 > 0.3 * max_jump);
    assert!((out2[100].lambda - out[50].lambda).norm() < 1e-10);
}

#[test]
fn spectral_radius_below_one_off_zero() {
    let sys = system_15();
    for b in [0.2, 0.5, 1.0] {
        let path: Vec<Complex64> = (0..=10).map(|k| Complex64::new(0.0, b * k as f64 / 10.0)).collect();
        let out = eig_continuation(sys, &path).unwrap();
        let lam = out.last().unwrap().lambda;
        assert!(lam.norm() < 1.0, "b = {b}: |λ| = {}", lam.norm());
        for d in &out {
            assert!(d.lambda.norm() <= 1.0 + 1e-10);
        }
    }
}

#[test]
fn resolvent_blows_up_like_b_to_minus_beta() {
    let sys = system_15();
    let bs: Vec<f64> = (0..=8).map(|k| 1e-3 * 10f64.powf(k as f64 / 4.0)).collect();
    let one = GridFunction::on_y(vec![Complex64::new(1.0, 0.0); sys.n_y()]);
    let norms: Vec<f64> = bs
        .iter()
        .map(|&b| {
            let m = assemble_twisted(sys, Complex64::new(0.0, b)).unwrap();
            resolve(&m, &one).unwrap().sup_norm()
        })
        .collect();
    let fit = fit_loglog(&bs, &norms, None).unwrap();
    assert!((fit.exponent + sys.beta()).abs() < 0.1, "slope {}", fit.exponent);
}

#[test]
fn pole_is_reported() {
    let sys = system_15();
    let m = assemble_twisted(sys, Complex64::new(0.0, 0.0)).unwrap();
    assert!(matches!(Resolvent::new(&m), Err(Error::NearSingular { .. })));
}

#[test]
fn probe_is_finite_for_aperiodic_roof() {
    let sys = system_15();
    let table = resolvent_norm_probe(sys, &[1.0, 2.0, 5.0, 10.0, 20.0, 50.0], 7).unwrap();
    assert!(table.rows.iter().all(|r| r.norm.is_finite() && !r.near_singular));
    let fit = table.exponent.expect("exponent fitted");
    assert!(fit.interval.0 <= fit.exponent && fit.exponent <= fit.interval.1);
}

#[test]
fn probe_flags_arithmetic_roof() {
    let sys = InducedSystem::build(
        LsvMap::new(1.5).unwrap(),
        RoofPreset::with_scale(RoofKind::Const, 1.0).unwrap(),
        params(400, 48),
    )
    .unwrap();
    let tau = std::f64::consts::TAU;
    let table = resolvent_norm_probe(&sys, &[1.0, 2.0, tau, 5.0], 1).unwrap();
    let flagged: Vec<f64> = table.rows.iter().filter(|r| r.near_singular).map(|r| r.b).collect();
    assert_eq!(flagged, vec![tau]);
}
