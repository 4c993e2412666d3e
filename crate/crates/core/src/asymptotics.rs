//! Closed-form constants and predicted correlation curves, plus log-log fitting.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::gamma as gamma_fn;
use std::f64::consts::PI;

use crate::curve::CorrelationCurve;
use crate::error::{Error, Result};
use crate::function_space::gauss_legendre;
use crate::induced::{InducedSystem, Regime};

/// `ε` used in the finite-regime remainder scale `ξ_{β,ε}`.
pub const REMAINDER_EPS: f64 = 0.1;

/// Predictions are only evaluated from this time on.
pub const T_FLOOR: f64 = 10.0;

/// `d_β = sin(βπ)/π` for `β < 1`, `1` at `β = 1`.
pub fn d_beta(beta: f64) -> Result<f64> {
    if !(beta > 0.5 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "d_beta needs beta in (1/2, 1], got {beta}"
        )));
    }
    if beta == 1.0 {
        Ok(1.0)
    } else {
        Ok((beta * PI).sin() / PI)
    }
}

fn check_open_beta(beta: f64) -> Result<()> {
    if beta > 0.5 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "c_beta needs beta in (1/2, 1), got {beta}"
        )))
    }
}

/// `c_β = Γ(1-β) e^{iπβ/2}`.
pub fn c_beta_closed_form(beta: f64) -> Result<Complex64> {
    check_open_beta(beta)?;
    Ok(Complex64::from_polar(gamma_fn(1.0 - beta), 0.5 * PI * beta))
}

/// `∫_0^∞ e^{-(i+ε)σ} σ^{-β} dσ` by quadrature.
fn damped_integral(beta: f64, eps: f64) -> Complex64 {
    let z = Complex64::new(eps, 1.0);
    let (gx, gw) = gauss_legendre(20);
    let mut acc = Complex64::new(0.0, 0.0);
    // [0, 1] with σ = x^{1/(1-β)}, which removes the singularity
    let p = 1.0 / (1.0 - beta);
    let panels = 8;
    for k in 0..panels {
        let (a, b) = (k as f64 / panels as f64, (k + 1) as f64 / panels as f64);
        let half = 0.5 * (b - a);
        for (x, w) in gx.iter().zip(&gw) {
            let xx = a + half * (x + 1.0);
            let sigma = xx.powf(p);
            acc += (-z * sigma).exp() * (p * half * w);
        }
    }
    // [1, ∞) on unit panels until the damping has killed the integrand
    let end = 1.0 + 40.0 / eps;
    let mut a = 1.0;
    while a < end {
        let b = a + 1.0;
        for (x, w) in gx.iter().zip(&gw) {
            let sigma = a + 0.5 * (x + 1.0);
            acc += (-z * sigma).exp() * (0.5 * w * sigma.powf(-beta));
        }
        a = b;
    }
    acc
}

/// `c_β = i∫_0^∞ e^{-iσ}σ^{-β}dσ` by damped quadrature and Richardson extrapolation in `ε`.
pub fn c_beta(beta: f64) -> Result<Complex64> {
    check_open_beta(beta)?;
    let levels = 7;
    let eps: Vec<f64> = (0..levels).map(|k| 0.2 / 2f64.powi(k)).collect();
    let vals: Vec<Complex64> = eps.iter().map(|&e| damped_integral(beta, e)).collect();
    // Neville to ε = 0
    let mut table = vals.clone();
    let mut previous = table[0];
    let mut last_change = f64::INFINITY;
    for m in 1..levels as usize {
        for j in 0..levels as usize - m {
            let (e0, e1) = (eps[j], eps[j + m]);
            table[j] = (table[j + 1] * e0 - table[j] * e1) / (e0 - e1);
        }
        last_change = (table[0] - previous).norm();
        previous = table[0];
    }
    if last_change > 1e-7 * previous.norm() {
        return Err(Error::Convergence {
            what: "c_beta extrapolation",
            iterations: levels as usize,
            residual: last_change,
        });
    }
    Ok(Complex64::i() * previous)
}

/// `ξ_β(t)` (finite regime, `β > 1`).
pub fn xi_beta(beta: f64, t: f64) -> f64 {
    if beta > 2.0 {
        t.powf(-beta)
    } else if beta == 2.0 {
        t.ln() * t.powi(-2)
    } else {
        t.powf(-(2.0 * beta - 2.0))
    }
}

/// `ξ_{β,ε}(t)` (finite regime, `β > 1`).
pub fn xi_beta_eps(beta: f64, eps: f64, t: f64) -> f64 {
    if beta >= 2.0 {
        t.powf(-(beta - eps))
    } else {
        t.powf(-(2.0 * beta - 2.0))
    }
}

/// `γ(t) = ∫_t^∞ μ(φ > τ) dτ`.
pub fn gamma_of_t(system: &InducedSystem, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("gamma needs t >= 0, got {t}")));
    }
    system.gamma(t)
}

/// `c₀ = ¼ β^β φ_X(0)^β h(½)`.
pub fn c0(system: &InducedSystem) -> f64 {
    let beta = system.beta();
    0.25 * beta.powf(beta) * system.roof().at_zero().powf(beta) * system.h_half()
}

/// `c₁ = ¼ β^β h(½)`.
pub fn c1(system: &InducedSystem) -> f64 {
    let beta = system.beta();
    0.25 * beta.powf(beta) * system.h_half()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Fitted,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub name: &'static str,
    pub value: f64,
    pub provenance: Provenance,
}

/// Predicted large-time behaviour of `ρ_{v,w}`.
#[derive(Debug, Clone)]
pub struct Prediction<'a> {
    pub regime: Regime,
    pub beta: f64,
    pub vbar: f64,
    pub wbar: f64,
    pub constants: Vec<Constant>,
    /// Exponent `p` of the remainder scale `t^{-p}`.
    pub remainder_exponent: f64,
    system: &'a InducedSystem,
}

impl<'a> Prediction<'a> {
    fn constant(&self, name: &str) -> f64 {
        self.constants
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.value)
            .unwrap_or(f64::NAN)
    }

    /// Predicted `ρ(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < T_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "predictions start at t = {T_FLOOR}, got {t}"
            )));
        }
        let vw = self.vbar * self.wbar;
        let c0 = self.constant("c0");
        Ok(match self.regime {
            Regime::Infinite => self.constant("d_beta") * vw * t.powf(self.beta - 1.0) / c0,
            Regime::Boundary => vw / (c0 * t.ln()),
            Regime::Finite => vw + vw * self.system.gamma(t)? / self.constant("phi_bar"),
        })
    }

    /// Predicted `ρ(t) - v̄w̄` (finite regime) or `ρ(t)` otherwise.
    pub fn eval_decay(&self, t: f64) -> Result<f64> {
        let v = self.eval(t)?;
        Ok(match self.regime {
            Regime::Finite => v - self.vbar * self.wbar,
            _ => v,
        })
    }
}

/// Build the prediction for a system and observable means `v̄`, `w̄`.
pub fn predict(system: &InducedSystem, vbar: f64, wbar: f64) -> Result<Prediction<'_>> {
    let beta = system.beta();
    let regime = system.regime();
    let mut constants = vec![Constant {
        name: "c0",
        value: c0(system),
        provenance: Provenance::Analytic,
    }];
    let remainder_exponent = match regime {
        Regime::Infinite => {
            if beta <= 0.5 {
                return Err(Error::Regime(format!(
                    "infinite-measure prediction needs beta > 1/2, got {beta}"
                )));
            }
            constants.push(Constant {
                name: "d_beta",
                value: d_beta(beta)?,
                provenance: Provenance::Analytic,
            });
            constants.push(Constant {
                name: "abs_c_beta",
                value: c_beta_closed_form(beta)?.norm(),
                provenance: Provenance::Analytic,
            });
            0.5 - REMAINDER_EPS
        }
        Regime::Boundary => {
            constants.push(Constant {
                name: "d_beta",
                value: 1.0,
                provenance: Provenance::Analytic,
            });
            0.0
        }
        Regime::Finite => {
            let phi_bar = system
                .phi_bar()
                .ok_or_else(|| Error::Regime("finite regime without a mean roof".into()))?;
            constants.push(Constant {
                name: "phi_bar",
                value: phi_bar,
                provenance: Provenance::Quadrature,
            });
            if beta >= 2.0 {
                beta - REMAINDER_EPS
            } else {
                2.0 * beta - 2.0
            }
        }
    };
    Ok(Prediction {
        regime,
        beta,
        vbar,
        wbar,
        constants,
        remainder_exponent,
        system,
    })
}

/// Result of a weighted least-squares fit of `log y = log level + exponent · log t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub level: f64,
    pub exponent_stderr: f64,
    /// 95% interval of the exponent.
    pub interval: (f64, f64),
    pub points: usize,
}

impl PowerLawFit {
    pub fn contains(&self, exponent: f64) -> bool {
        exponent >= self.interval.0 && exponent <= self.interval.1
    }
}

/// Monotone upper envelope `E_k = max_{j ≥ k} |y_j|` of samples on an increasing grid.
/// Fitting `E` bounds a sign-indefinite remainder from above.
pub fn upper_envelope(y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    let mut top: f64 = 0.0;
    for k in (0..y.len()).rev() {
        top = top.max(y[k].abs());
        out[k] = top;
    }
    out
}

/// Fit on positive data; `rel_err` are relative error bars used as weights.
pub fn fit_loglog(t: &[f64], y: &[f64], rel_err: Option<&[f64]>) -> Result<PowerLawFit> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::FitWindow(format!(
            "need at least 3 matching points, got {}",
            t.len()
        )));
    }
    if let Some(k) = y.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::SignChange(k));
    }
    let xs: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let ws: Vec<f64> = match rel_err {
        Some(e) => e.iter().map(|&s| 1.0 / (s * s).max(1e-300)).collect(),
        None => vec![1.0; t.len()],
    };
    let sw: f64 = ws.iter().sum();
    let xm = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (x - xm) * (y - ym))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::FitWindow("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let n = t.len();
    let dof = (n - 2) as f64;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (rss / dof / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, dof)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(1.96);
    Ok(PowerLawFit {
        exponent: slope,
        level: intercept.exp(),
        exponent_stderr: stderr,
        interval: (slope - q * stderr, slope + q * stderr),
        points: n,
    })
}

/// Power-law fit of a correlation curve over `[t1, t2]`. Negative
/// sign-constant data are fitted in absolute value.
pub fn fit_powerlaw(curve: &CorrelationCurve, window: (f64, f64)) -> Result<PowerLawFit> {
    let (t1, t2) = window;
    if !(t1 > 0.0 && t2 >= 10.0 * t1) {
        return Err(Error::FitWindow(format!(
            "window [{t1}, {t2}] is shorter than a decade"
        )));
    }
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut es = Vec::new();
    for p in curve.points() {
        if p.t >= t1 && p.t <= t2 {
            ts.push(p.t);
            ys.push(p.value);
            es.push(p.error);
        }
    }
    if ts.len() < 8 {
        return Err(Error::FitWindow(format!("{} points in window, need 8", ts.len())));
    }
    let sign = ys[0].signum();
    if let Some(k) = ys.iter().position(|&v| v.signum() != sign || v == 0.0) {
        return Err(Error::SignChange(k));
    }
    let abs: Vec<f64> = ys.iter().map(|v| v.abs()).collect();
    let weighted = es.iter().all(|&e| e > 0.0);
    let rel: Vec<f64> = es.iter().zip(&abs).map(|(e, y)| e / y).collect();
    fit_loglog(&ts, &abs, weighted.then_some(rel.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{CurvePoint, Source};

    #[test]
    fn d_beta_values() {
        assert_eq!(d_beta(1.0).unwrap(), 1.0);
        assert!((d_beta(0.75).unwrap() - 0.225_079).abs() < 1e-6);
        assert!((d_beta(2.0 / 3.0).unwrap() - 0.275_664).abs() < 1e-6);
        assert!(d_beta(0.4).is_err());
        assert!(d_beta(1.2).is_err());
        // the jump at β = 1 is real
        assert!(d_beta(1.0 - 1e-9).unwrap() < 1e-8);
    }

    #[test]
    fn c_beta_quadrature_matches_closed_form() {
        for beta in [0.6, 2.0 / 3.0, 0.8, 0.9] {
            let q = c_beta(beta).unwrap();
            let c = c_beta_closed_form(beta).unwrap();
            assert!((q - c).norm() < 1e-8, "beta {beta}: {q} vs {c}");
        }
    }

    #[test]
    fn c_beta_pole_and_identity() {
        let mut prev = f64::INFINITY;
        for beta in [0.9, 0.95, 0.99] {
            let c = c_beta(beta).unwrap();
            let dev = (c.norm() * (1.0 - beta) - 1.0).abs();
            assert!(dev < prev);
            prev = dev;
        }
        assert!(prev < 0.01);
        // Re(c_β^{-1} ∫ e^{iσ} σ^{-β}) = sin βπ; the integral is conj(c_β / i)
        for beta in [0.6, 2.0 / 3.0, 0.85] {
            let c = c_beta(beta).unwrap();
            let integral = (c / Complex64::i()).conj();
            assert!(((integral / c).re - (beta * PI).sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_exact_and_noisy() {
        let ts: Vec<f64> = (0..30).map(|k| 10f64.powf(1.0 + 2.0 * k as f64 / 29.0)).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t.powf(-0.5)).collect();
        let fit = fit_loglog(&ts, &ys, None).unwrap();
        assert!((fit.exponent + 0.5).abs() < 1e-10);
        assert!((fit.level - 3.0).abs() < 1e-9);
        // deterministic 1% multiplicative noise
        let noisy: Vec<f64> = ys
            .iter()
            .enumerate()
            .map(|(k, y)| y * (1.0 + 0.01 * ((k * 7919 % 13) as f64 / 6.0 - 1.0)))
            .collect();
        let fit = fit_loglog(&ts, &noisy, None).unwrap();
        assert!(fit.contains(-0.5), "{fit:?}");
    }

    #[test]
    fn fit_window_guards() {
        let pts = (0..20)
            .map(|k| {
                let t = 10.0 + k as f64;
                CurvePoint {
                    t,
                    value: 1.0 / t,
                    error: 0.0,
                }
            })
            .collect();
        let curve = CorrelationCurve::new(Source::Renewal, pts);
        assert!(matches!(fit_powerlaw(&curve, (10.0, 29.0)), Err(Error::FitWindow(_))));
        let pts = (0..20)
            .map(|k| {
                let t = 10f64.powf(1.0 + k as f64 / 19.0);
                CurvePoint {
                    t,
                    value: if k == 10 { -1.0 } else { 1.0 / t },
                    error: 0.0,
                }
            })
            .collect();
        let curve = CorrelationCurve::new(Source::Renewal, pts);
        assert!(matches!(
            fit_powerlaw(&curve, (10.0, 100.0)),
            Err(Error::SignChange(10))
        ));
    }

    #[test]
    fn remainder_scales() {
        assert!((xi_beta(1.5, 100.0) - 0.01).abs() < 1e-15);
        assert!((xi_beta_eps(3.0, 0.1, 10.0) - 10f64.powf(-2.9)).abs() < 1e-15);
        assert!((xi_beta(2.0, 10.0) - 10f64.ln() / 100.0).abs() < 1e-15);
    }
}
