#![allow(dead_code)]

use lsv_renewal::inversion::{InversionPlan, SampleTable, TailTerm};
use num_complex::Complex64;
use statrs::function::gamma::gamma;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Taylor coefficients in `z` of `num(z)/den(z)`, `den(0) != 0`.
pub fn series(num: &[f64], den: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut acc = num.get(k).copied().unwrap_or(0.0);
        for j in 1..=k.min(den.len() - 1) {
            acc -= den[j] * out[k - j];
        }
        out[k] = acc / den[0];
    }
    out
}

/// Table for a transform `F(s)` with `F = Σ_{j≥1} a_j s^{-j}`, `a_j = coeff[j]`.
pub fn rational_table(plan: &InversionPlan, f: impl Fn(Complex64) -> Complex64, coeff: &[f64]) -> SampleTable {
    let m = plan.m_shift;
    let tail: Vec<TailTerm> = (1..=m)
        .map(|j| TailTerm {
            power: j as f64,
            coef: coeff[j] * I.powi(-(j as i32)),
        })
        .collect();
    let model = |b: f64| -> Complex64 { tail.iter().map(|t| t.coef * b.powf(-t.power)).sum() };
    let top = plan.b_max;
    let remainder = (f(I * top) - model(top)).norm() * top.powi(m as i32);
    SampleTable::from_fn(plan, |b| f(I * b), tail, remainder)
}

/// `Γ(β)(ib)^{-β}`, the transform of `t^{β-1}`.
pub fn heavy_table(plan: &InversionPlan, beta: f64) -> SampleTable {
    let g = gamma(beta);
    let coef = I.powf(-beta) * g;
    SampleTable::from_fn(
        plan,
        |b| coef * b.powf(-beta),
        vec![TailTerm { power: beta, coef }],
        0.0,
    )
}
