use lsv_renewal::asymptotics::fit_loglog;
use lsv_renewal::curve::log_grid;
use lsv_renewal::inversion::{invert, InversionPlan, InversionRegime};
use num_complex::Complex64;
mod common;

use common::{heavy_table, rational_table, series};

fn check_pair(name: &str, f: impl Fn(Complex64) -> Complex64, coeff: &[f64], rho: impl Fn(f64) -> f64) {
    let plan = InversionPlan::new(InversionRegime::Regular);
    let table = rational_table(&plan, f, coeff);
    let t = log_grid(0.5, 10.0, 25);
    let curve = invert(&plan, &table, &t).unwrap();
    let mut worst: f64 = 0.0;
    for p in curve.points() {
        worst = worst.max((p.value - rho(p.t)).abs());
    }
    assert!(worst < 1e-4, "{name}: max deviation {worst:e}");
}

#[test]
fn exponential_pair() {
    // 1/(1+s) = z/(1+z), z = 1/s
    let c = series(&[0.0, 1.0], &[1.0, 1.0], 8);
    check_pair("e^-t", |s| 1.0 / (1.0 + s), &c, |t| (-t).exp());
}

#[test]
fn double_pole_pair() {
    let c = series(&[0.0, 0.0, 1.0], &[1.0, 2.0, 1.0], 8);
    check_pair("t e^-t", |s| 1.0 / ((1.0 + s) * (1.0 + s)), &c, |t| t * (-t).exp());
}

#[test]
fn damped_cosine_pair() {
    // (1+s)/((1+s)²+1) = z(1+z)/(1 + 2z + 2z²)
    let c = series(&[0.0, 1.0, 1.0], &[1.0, 2.0, 2.0], 8);
    check_pair(
        "e^-t cos t",
        |s| (1.0 + s) / ((1.0 + s) * (1.0 + s) + 1.0),
        &c,
        |t| (-t).exp() * t.cos(),
    );
}

#[test]
fn heavy_tail_pair_slope() {
    let beta = 2.0 / 3.0;
    let plan = InversionPlan::new(InversionRegime::Infinite { beta });
    let table = heavy_table(&plan, beta);
    for (lo, hi) in [(10.0, 100.0), (100.0, 1000.0), (1000.0, 1e4)] {
        let t = log_grid(lo, hi, 12);
        let curve = invert(&plan, &table, &t).unwrap();
        let fit = fit_loglog(&t, &curve.values(), None).unwrap();
        assert!(
            (fit.exponent + 1.0 / 3.0).abs() < 0.03,
            "[{lo}, {hi}]: {}",
            fit.exponent
        );
        for p in curve.points() {
            let want = p.t.powf(beta - 1.0);
            assert!(
                (p.value - want).abs() < 1e-3 * want,
                "t = {}: {} vs {want}",
                p.t,
                p.value
            );
        }
    }
}

#[test]
fn inversion_is_linear() {
    // a shared grid needs refinement off
    let mut plan = InversionPlan::new(InversionRegime::Regular);
    plan.refine_rounds = 0;
    let c1 = series(&[0.0, 1.0], &[1.0, 1.0], 8);
    let c2 = series(&[0.0, 1.0, 1.0], &[1.0, 2.0, 2.0], 8);
    let a = rational_table(&plan, |s| 1.0 / (1.0 + s), &c1);
    let b = rational_table(&plan, |s| (1.0 + s) / ((1.0 + s) * (1.0 + s) + 1.0), &c2);
    let both = a.combine(2.5, &b, -0.7).unwrap();
    let t = log_grid(0.5, 50.0, 30);
    let (ra, rb, rab) = (
        invert(&plan, &a, &t).unwrap(),
        invert(&plan, &b, &t).unwrap(),
        invert(&plan, &both, &t).unwrap(),
    );
    for k in 0..t.len() {
        let lin = 2.5 * ra.points()[k].value - 0.7 * rb.points()[k].value;
        assert!((rab.points()[k].value - lin).abs() < 1e-12, "t = {}", t[k]);
    }
}

#[test]
fn refinement_stays_within_error_bar() {
    let c = series(&[0.0, 0.0, 1.0], &[1.0, 2.0, 1.0], 8);
    let f = |s: Complex64| 1.0 / ((1.0 + s) * (1.0 + s));
    let plan = InversionPlan::new(InversionRegime::Regular);
    let mut fine = plan;
    fine.per_decade *= 2;
    let t = log_grid(0.5, 1e3, 30);
    let a = invert(&plan, &rational_table(&plan, f, &c), &t).unwrap();
    let b = invert(&fine, &rational_table(&fine, f, &c), &t).unwrap();
    for (p, q) in a.points().iter().zip(b.points()) {
        assert!(
            (p.value - q.value).abs() <= p.error,
            "t = {}: |Δ| = {:e}, bar {:e}",
            p.t,
            (p.value - q.value).abs(),
            p.error
        );
    }
}

#[test]
fn finite_pole_is_restored() {
    // ρ(t) = 0.3 + e^{-t}: ρ̂ = 0.3/s + 1/(1+s)
    let beta = 1.5;
    let plan = InversionPlan::new(InversionRegime::Finite { beta, pole: 0.3 });
    let mut c = series(&[0.0, 1.0], &[1.0, 1.0], 8);
    c[1] += 0.3;
    let table = rational_table(&plan, |s| 0.3 / s + 1.0 / (1.0 + s), &c);
    let t = log_grid(0.5, 20.0, 15);
    let curve = invert(&plan, &table, &t).unwrap();
    for p in curve.points() {
        assert!((p.value - 0.3 - (-p.t).exp()).abs() < 1e-4, "t = {}: {}", p.t, p.value);
    }
}

#[test]
fn undersampled_grid_is_rejected() {
    let mut plan = InversionPlan::new(InversionRegime::Regular);
    plan.b_geometric = 0.01;
    plan.linear_step = 2.0;
    plan.refine_rounds = 0;
    let c = series(&[0.0, 1.0], &[1.0, 1.0], 8);
    let table = rational_table(&plan, |s| 1.0 / (1.0 + s), &c);
    assert!(invert(&plan, &table, &[2.0]).is_err());
}
