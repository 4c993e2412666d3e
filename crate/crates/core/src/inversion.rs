//! Recovery of `ρ(t)` from samples of `ρ̂(ib)` on the imaginary axis.
//!
//! All regimes reduce to `ρ(t) = scale · Re ∫_0^∞ e^{ibt} G(b) db`, with
//! `G = ρ̂(ib)` (or `ρ̂(ib) - v̄w̄/(ib)`, restoring `v̄w̄` afterwards) and
//! `scale = 1/π`, or `G = Re ρ̂(ib)` and `scale = 2/π` when `β = 1`.
//! The integral is split into a power-law stub on `[0, b_min]`, Filon
//! panels on the sampled grid and an asymptotic tail past `b_max`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::curve::{CorrelationCurve, CurvePoint, Source};
use crate::error::{Error, Result};
use crate::function_space::{gauss_legendre, Observable};
use crate::renewal::{rho_at_zero, rho_hat, rho_hat_batch, RenewalContext};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Minimum samples per oscillation of `e^{ibt}` at `b = 2π/t`.
pub const MIN_POINTS_PER_OSCILLATION: f64 = 6.0;
/// Largest `b_min·t` for which the stub series is used.
const STUB_MAX_PHASE: f64 = 8.0;
/// Phase `b·t` past which the tail uses its asymptotic series.
const TAIL_ASYMPTOTIC_PHASE: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InversionRegime {
    /// `β < 1`: stub `c·b^{-β} + d·b^{1-2β}`.
    Infinite { beta: f64 },
    /// `β = 1`: real-part formula, stub `κ / (b (π²/4 + log²(1/b)))`.
    Boundary,
    /// `β > 1`: the pole `v̄w̄/s` is subtracted, stub `c·b^{β-2} + d·b^{2β-3}`.
    Finite { beta: f64, pole: f64 },
    /// Bounded `G` near 0 (test pairs): constant stub.
    Regular,
}

impl InversionRegime {
    /// Exponents of the two-term stub `c·b^{p} + d·b^{q}` (`q = None`: one term).
    fn stub_exponents(&self) -> (f64, Option<f64>) {
        match *self {
            // next term of 1/(c b^β (1 + D b^{1-β}))
            Self::Infinite { beta } => (-beta, Some(1.0 - 2.0 * beta)),
            // s^{β-2} from the first-order piece, s^{2β-3} from the second
            Self::Finite { beta, .. } => (beta - 2.0, Some(2.0 * beta - 3.0)),
            Self::Boundary | Self::Regular => (0.0, None),
        }
    }

    fn scale(&self) -> f64 {
        match self {
            Self::Boundary => 2.0 / PI,
            _ => 1.0 / PI,
        }
    }

    fn pole(&self) -> f64 {
        match *self {
            Self::Finite { pole, .. } => pole,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionPlan {
    pub regime: InversionRegime,
    pub b_min: f64,
    pub b_max: f64,
    pub per_decade: usize,
    /// End of the geometric part of the grid; linear steps follow.
    pub b_geometric: f64,
    pub linear_step: f64,
    /// Order of the shifted remainder bounding the tail past `b_max`.
    pub m_shift: usize,
    /// Intervals are bisected while `h · (leave-one-out cubic error)` exceeds
    /// `refine_tol · max|G|`.
    pub refine_tol: f64,
    pub refine_rounds: usize,
}

impl InversionPlan {
    pub fn new(regime: InversionRegime) -> Self {
        Self {
            regime,
            b_min: 1e-4,
            b_max: 50.0,
            per_decade: 24,
            b_geometric: 2.0,
            linear_step: 0.2,
            m_shift: 4,
            refine_tol: 1e-7,
            refine_rounds: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.b_min >= 1e-4) {
            return bad(format!("b_min must be at least 1e-4, got {}", self.b_min));
        }
        if !(self.b_max >= 10.0) {
            return bad(format!("b_max must be at least 10, got {}", self.b_max));
        }
        if self.per_decade < 16 {
            return bad(format!("need at least 16 points per decade, got {}", self.per_decade));
        }
        if !(self.b_geometric > self.b_min && self.b_geometric <= self.b_max) {
            return bad("b_geometric must lie in (b_min, b_max]".into());
        }
        if !(self.linear_step > 0.0) {
            return bad("linear step must be positive".into());
        }
        if !(1..=6).contains(&self.m_shift) {
            return bad(format!("m_shift must be in 1..=6, got {}", self.m_shift));
        }
        if !(self.refine_tol > 0.0) || self.refine_rounds > 16 {
            return bad("refine_tol must be positive and refine_rounds at most 16".into());
        }
        match self.regime {
            InversionRegime::Infinite { beta } if !(beta > 0.0 && beta < 1.0) => {
                bad(format!("infinite regime needs β < 1, got {beta}"))
            }
            InversionRegime::Finite { beta, .. } if !(beta > 1.0 && beta < 2.0) => {
                bad(format!("finite regime needs 1 < β < 2, got {beta}"))
            }
            _ => Ok(()),
        }
    }

    /// Sample frequencies: geometric on `[b_min, b_geometric]`, then linear up to `b_max`.
    pub fn b_grid(&self) -> Vec<f64> {
        let decades = (self.b_geometric / self.b_min).log10();
        let n_geo = (decades * self.per_decade as f64).ceil().max(1.0) as usize;
        let ratio = (self.b_geometric / self.b_min).powf(1.0 / n_geo as f64);
        let mut b: Vec<f64> = (0..n_geo).map(|k| self.b_min * ratio.powi(k as i32)).collect();
        b.push(self.b_geometric);
        let n_lin = ((self.b_max - self.b_geometric) / self.linear_step).ceil() as usize;
        let h = (self.b_max - self.b_geometric) / n_lin.max(1) as f64;
        for k in 1..=n_lin {
            b.push(self.b_geometric + h * k as f64);
        }
        b
    }

    /// Error unless the grid has enough points per oscillation where `e^{ibt}` first turns.
    pub fn check_sampling(&self, b: &[f64], t: &[f64]) -> Result<()> {
        for &tt in t {
            let period = 2.0 * PI / tt;
            if period <= b[0] || period >= *b.last().unwrap() {
                continue;
            }
            let k = b.partition_point(|&x| x <= period).min(b.len() - 1);
            let h = b[k] - b[k - 1];
            if period / h < MIN_POINTS_PER_OSCILLATION {
                return Err(Error::Sampling(format!(
                    "t = {tt}: {:.2} points per oscillation at b = {period:.4} (need {MIN_POINTS_PER_OSCILLATION})",
                    period / h
                )));
            }
        }
        Ok(())
    }
}

/// One asymptotic term `coef · b^{-power}` of `G` past `b_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailTerm {
    pub power: f64,
    pub coef: Complex64,
}

/// Samples of `ρ̂(ib)` on the plan's grid with the large-`b` model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTable {
    pub b: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Expansion of `ρ̂(ib)` for `b > b_max` (pole not removed).
    pub tail: Vec<TailTerm>,
    /// `sup_{b ≥ b_max} |ρ̂(ib) - Σ tail| · b^{m}`, i.e. `|ρ̂_{v,∂^m w}(ib_max)|`.
    pub remainder: f64,
    pub m_shift: usize,
}

impl SampleTable {
    /// Pointwise `a·self + c·other` on identical grids.
    pub fn combine(&self, a: f64, other: &SampleTable, c: f64) -> Result<SampleTable> {
        if self.b != other.b || self.m_shift != other.m_shift {
            return Err(Error::InvalidArgument("sample tables live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x * a + y * c)
            .collect();
        let mut tail: Vec<TailTerm> = self
            .tail
            .iter()
            .map(|t| TailTerm {
                power: t.power,
                coef: t.coef * a,
            })
            .collect();
        for t in &other.tail {
            match tail.iter_mut().find(|x| x.power == t.power) {
                Some(x) => x.coef += t.coef * c,
                None => tail.push(TailTerm {
                    power: t.power,
                    coef: t.coef * c,
                }),
            }
        }
        Ok(SampleTable {
            b: self.b.clone(),
            values,
            tail,
            remainder: a.abs() * self.remainder + c.abs() * other.remainder,
            m_shift: self.m_shift,
        })
    }

    /// Samples `b ↦ f(b)` of a known transform (test pairs).
    pub fn from_fn(plan: &InversionPlan, f: impl Fn(f64) -> Complex64, tail: Vec<TailTerm>, remainder: f64) -> Self {
        let (b, values) = refined_samples(plan, |b| Ok(b.iter().map(|&x| f(x)).collect())).expect("infallible sampler");
        Self {
            b,
            values,
            tail,
            remainder,
            m_shift: plan.m_shift,
        }
    }
}

/// Samples on the plan's grid, bisecting intervals around unresolved features
/// (near-resonances of `R̂(ib)` show up as narrow peaks).
fn refined_samples(
    plan: &InversionPlan,
    mut eval: impl FnMut(&[f64]) -> Result<Vec<Complex64>>,
) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let mut b = plan.b_grid();
    let mut g = eval(&b)?;
    let pole = plan.regime.pole();
    for _ in 0..plan.refine_rounds {
        let smooth: Vec<Complex64> = b.iter().zip(&g).map(|(&x, &v)| v - pole / (I * x)).collect();
        let scale = b
            .iter()
            .zip(&smooth)
            .filter(|(&x, _)| x >= plan.b_geometric)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max);
        let tol = plan.refine_tol * scale.max(f64::MIN_POSITIVE);
        let mut split = vec![false; b.len() - 1];
        for k in 2..b.len() - 2 {
            let nodes = [k - 2, k - 1, k + 1, k + 2];
            let mut guess = ZERO;
            for &j in &nodes {
                let l: f64 = nodes
                    .iter()
                    .filter(|&&m| m != j)
                    .map(|&m| (b[k] - b[m]) / (b[j] - b[m]))
                    .product();
                guess += smooth[j] * l;
            }
            let h = b[k + 1] - b[k - 1];
            if (guess - smooth[k]).norm() * h > tol {
                split[k - 1] = true;
                split[k] = true;
            }
        }
        let mids: Vec<f64> = (0..split.len())
            .filter(|&k| split[k])
            .map(|k| 0.5 * (b[k] + b[k + 1]))
            .collect();
        if mids.is_empty() {
            break;
        }
        let new = eval(&mids)?;
        let mut merged: Vec<(f64, Complex64)> = b.into_iter().zip(g).chain(mids.into_iter().zip(new)).collect();
        merged.sort_by(|x, y| x.0.total_cmp(&y.0));
        (b, g) = merged.into_iter().unzip();
    }
    Ok((b, g))
}

/// `ρ̂(ib)` over the plan's grid, with the tail expansion
/// `Σ_{j≤m} ρ_{v,∂^{j-1}w}(0)(ib)^{-j}` and the remainder `|ρ̂_{v,∂^m w}(ib_max)|`.
pub fn sample_table(ctx: &RenewalContext, plan: &InversionPlan, v: &Observable, w: &Observable) -> Result<SampleTable> {
    plan.validate()?;
    let vs = ctx.sample(v);
    let ws = ctx.sample(w);
    let (b, values) = refined_samples(plan, |b| {
        let s: Vec<Complex64> = b.iter().map(|&x| Complex64::new(0.0, x)).collect();
        Ok(rho_hat_batch(ctx, &s, &vs, &ws)?.into_iter().map(|r| r.value).collect())
    })?;
    let mut tail = Vec::with_capacity(plan.m_shift);
    for j in 1..=plan.m_shift {
        let c = rho_at_zero(ctx, &vs, &ctx.sample(&w.derivative(j - 1)))?;
        // (ib)^{-j} = i^{-j} b^{-j}
        tail.push(TailTerm {
            power: j as f64,
            coef: c * I.powi(-(j as i32)),
        });
    }
    let top = Complex64::new(0.0, plan.b_max);
    let remainder = rho_hat(ctx, top, &vs, &ctx.sample(&w.derivative(plan.m_shift)))?
        .value
        .norm();
    Ok(SampleTable {
        b,
        values,
        tail,
        remainder,
        m_shift: plan.m_shift,
    })
}

/// `∫_0^H e^{iωy} y^k dy` for `k = 0..4`.
fn moments(omega: f64, h: f64) -> [Complex64; 4] {
    let mut m = [ZERO; 4];
    let x = omega * h;
    if x.abs() < 1.0 {
        for (k, mk) in m.iter_mut().enumerate() {
            let mut term = Complex64::new(h.powi(k as i32 + 1), 0.0);
            let mut acc = ZERO;
            for n in 0..40 {
                let add = term / (n + k + 1) as f64;
                acc += add;
                if add.norm() <= 1e-17 * acc.norm() {
                    break;
                }
                term *= I * x / (n + 1) as f64;
            }
            *mk = acc;
        }
    } else {
        let e = (I * x).exp();
        let iw = I * omega;
        m[0] = (e - 1.0) / iw;
        for k in 1..4 {
            m[k] = (e * h.powi(k as i32) - m[k - 1] * k as f64) / iw;
        }
    }
    m
}

/// Monomial coefficients of the Lagrange basis on four nodes.
fn lagrange_monomials(y: [f64; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for j in 0..4 {
        let mut poly = [1.0, 0.0, 0.0, 0.0];
        let mut denom = 1.0;
        let mut deg = 0;
        for (m, &ym) in y.iter().enumerate() {
            if m == j {
                continue;
            }
            // poly *= (x - ym)
            for d in (0..=deg).rev() {
                poly[d + 1] += poly[d];
                poly[d] *= -ym;
            }
            deg += 1;
            denom *= y[j] - ym;
        }
        for d in 0..4 {
            out[j][d] = poly[d] / denom;
        }
    }
    out
}

/// `∫_{b_first}^{b_last} e^{ibt} G(b) db` on cubic panels of consecutive node
/// quadruples; panels start at node `offset` (the head uses the first panel).
fn filon(b: &[f64], g: &[Complex64], t: f64, offset: usize) -> Complex64 {
    let n = b.len();
    debug_assert!(n >= 4 && offset < 3);
    let mut acc = ZERO;
    let mut start = 0;
    while start + 1 < n {
        // panel nodes and the integration range inside them
        let (p0, lo, hi) = if start == 0 && offset > 0 {
            (0, 0, offset)
        } else if start + 3 < n {
            (start, start, start + 3)
        } else {
            (n - 4, start, n - 1)
        };
        let x0 = b[p0];
        let y = [0.0, b[p0 + 1] - x0, b[p0 + 2] - x0, b[p0 + 3] - x0];
        let basis = lagrange_monomials(y);
        let ma = moments(t, b[lo] - x0);
        let mb = moments(t, b[hi] - x0);
        let phase = (I * t * x0).exp();
        for j in 0..4 {
            let w: Complex64 = (0..4).map(|d| (mb[d] - ma[d]) * basis[j][d]).sum();
            acc += w * phase * g[p0 + j];
        }
        start = hi;
    }
    acc
}

/// `∫_0^B e^{ibt} b^p db`, `p > -1`, `B t ≤ 8`.
fn power_stub(p: f64, big_b: f64, t: f64) -> Complex64 {
    let x = big_b * t;
    let mut term = Complex64::new(big_b.powf(p + 1.0), 0.0);
    let mut acc = ZERO;
    for n in 0..80 {
        let add = term / (n as f64 + p + 1.0);
        acc += add;
        if add.norm() <= 1e-17 * acc.norm().max(1e-300) {
            break;
        }
        term *= I * x / (n + 1) as f64;
    }
    acc
}

/// `∫_0^B cos(bt) db / (b (π²/4 + (log(1/b) + c)²))` through `L + c = (π/2) tan θ`.
fn log_stub(big_b: f64, t: f64, c: f64) -> f64 {
    let (x, w) = gauss_legendre(64);
    let theta0 = (2.0 * ((1.0 / big_b).ln() + c) / PI).atan();
    let half = 0.5 * (0.5 * PI - theta0);
    let mut acc = 0.0;
    for (xq, wq) in x.iter().zip(&w) {
        let theta = theta0 + half * (xq + 1.0);
        let b = (c - 0.5 * PI * theta.tan()).exp();
        acc += wq * half * (t * b).cos();
    }
    acc * 2.0 / PI
}

/// Boundary stub model `Re G(ib) ≈ κ / (b (π²/4 + (L + c)²)) + a + d L`, `L = log(1/b)`.
#[derive(Debug, Clone, Copy)]
struct LogModel {
    kappa: f64,
    c: f64,
    a: f64,
    d: f64,
}

impl LogModel {
    /// Least squares in relative error over the nodes `b ≤ reach·b[0]`;
    /// linear in `(κ, a, d)`, scanned then golden-section refined in `c`.
    fn fit(b: &[f64], g: &[f64], reach: f64) -> Result<Self> {
        let n = b.partition_point(|&x| x <= reach * b[0]);
        if n < 6 {
            return Err(Error::Sampling(format!(
                "only {n} nodes below {reach}·b_min for the log stub"
            )));
        }
        let (b, g) = (&b[..n], &g[..n]);
        let q = PI * PI / 4.0;
        let solve = |c: f64| -> Option<(f64, Self)> {
            let rows = DMatrix::from_fn(n, 3, |i, j| {
                let l = (1.0 / b[i]).ln();
                let phi = [1.0 / (b[i] * ((l + c).powi(2) + q)), 1.0, l][j];
                phi / g[i]
            });
            let x = rows
                .clone()
                .svd(true, true)
                .solve(&DVector::from_element(n, 1.0), 1e-14)
                .ok()?;
            let r = (&rows * &x).add_scalar(-1.0).norm_squared();
            r.is_finite().then_some((
                r,
                Self {
                    kappa: x[0],
                    c,
                    a: x[1],
                    d: x[2],
                },
            ))
        };
        let lo = 0.05 - (1.0 / b[n - 1]).ln();
        let grid: Vec<f64> = (0..=240).map(|k| lo + k as f64 * (30.0 - lo) / 240.0).collect();
        let best = (0..grid.len())
            .filter_map(|k| solve(grid[k]).map(|(r, _)| (r, k)))
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .ok_or_else(|| Error::Sampling("log stub fit failed".into()))?
            .1;
        let (mut x0, mut x1) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let cost = |c: f64| solve(c).map_or(f64::INFINITY, |x| x.0);
        for _ in 0..60 {
            let (u, v) = (x1 - ratio * (x1 - x0), x0 + ratio * (x1 - x0));
            if cost(u) < cost(v) {
                x1 = v;
            } else {
                x0 = u;
            }
        }
        solve(0.5 * (x0 + x1))
            .map(|x| x.1)
            .ok_or_else(|| Error::Sampling("log stub fit failed".into()))
    }

    /// `∫_0^B cos(bt) (model) db`.
    fn stub(&self, big_b: f64, t: f64) -> f64 {
        let w = big_b * t;
        let sinc = big_b * if w < 1e-8 { 1.0 } else { w.sin() / w };
        // ∫_0^1 log u cos(wu) du = -Σ (-1)^k w^{2k} / ((2k)! (2k+1)²)
        let mut term = 1.0;
        let mut log_cos = 0.0;
        for k in 0..60 {
            log_cos -= term / ((2 * k + 1) as f64).powi(2);
            term *= -w * w / (((2 * k + 1) * (2 * k + 2)) as f64);
        }
        let log_part = (1.0 / big_b).ln() * sinc - big_b * log_cos;
        self.kappa * log_stub(big_b, t, self.c) + self.a * sinc + self.d * log_part
    }
}

/// `∫_B^∞ e^{ibt} b^{-q} db` for `B t ≥ 40`.
fn tail_asymptotic(q: f64, big_b: f64, t: f64) -> Complex64 {
    let x = big_b * t;
    let lead = -(I * x).exp() / (I * x);
    let mut term = Complex64::new(1.0, 0.0);
    let mut acc = term;
    let mut last = 1.0;
    for k in 0..40 {
        term *= (q + k as f64) / (I * x);
        let size = term.norm();
        if size > last || size < 1e-17 {
            break;
        }
        acc += term;
        last = size;
    }
    lead * acc * big_b.powf(1.0 - q)
}

/// `∫_B^∞ e^{ibt} Σ coef·b^{-power} db`.
fn tail_integral(terms: &[TailTerm], big_b: f64, t: f64) -> Complex64 {
    let switch = (TAIL_ASYMPTOTIC_PHASE / t).max(big_b);
    let mut acc = ZERO;
    if switch > big_b {
        let (x, w) = gauss_legendre(16);
        let panels = (((switch - big_b) * t / PI).ceil() as usize).max(4);
        let h = (switch - big_b) / panels as f64;
        for p in 0..panels {
            let lo = big_b + h * p as f64;
            for (xq, wq) in x.iter().zip(&w) {
                let b = lo + 0.5 * h * (xq + 1.0);
                let g: Complex64 = terms.iter().map(|tt| tt.coef * b.powf(-tt.power)).sum();
                acc += (I * b * t).exp() * g * (0.5 * h * wq);
            }
        }
    }
    for tt in terms {
        acc += tt.coef * tail_asymptotic(tt.power, switch, t);
    }
    acc
}

/// The pieces of one inverted value, before scaling.
#[derive(Debug, Clone, Copy)]
struct Parts {
    stub: Complex64,
    stub_spread: f64,
    panels: Complex64,
    panels_spread: f64,
    tail: Complex64,
}

/// `ρ(t)` on `t_grid` from `table`. Error bars collect the stub spread, the
/// panel error (half-grid difference or alignment spread) and the remainder bound past `b_max`.
pub fn invert(plan: &InversionPlan, table: &SampleTable, t_grid: &[f64]) -> Result<CorrelationCurve> {
    plan.validate()?;
    let b = &table.b;
    if b.len() < 8 || b.len() != table.values.len() {
        return Err(Error::InvalidArgument(
            "sample table needs at least 8 matching points".into(),
        ));
    }
    if b[0] > plan.b_min * (1.0 + 1e-12) || *b.last().unwrap() < plan.b_max * (1.0 - 1e-12) {
        return Err(Error::Sampling(format!(
            "samples cover [{}, {}], plan needs [{}, {}]",
            b[0],
            b.last().unwrap(),
            plan.b_min,
            plan.b_max
        )));
    }
    if t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("inversion times must be positive".into()));
    }
    plan.check_sampling(b, t_grid)?;
    let regime = plan.regime;
    let pole = regime.pole();
    let boundary = matches!(regime, InversionRegime::Boundary);
    let g: Vec<Complex64> = b
        .iter()
        .zip(&table.values)
        .map(|(&x, &v)| {
            let sub = v - pole / (I * x);
            if boundary {
                Complex64::new(sub.re, 0.0)
            } else {
                sub
            }
        })
        .collect();
    let mut tail_terms = table.tail.clone();
    if pole != 0.0 {
        // v̄w̄/(ib) = -i v̄w̄ b^{-1}
        match tail_terms.iter_mut().find(|x| x.power == 1.0) {
            Some(x) => x.coef -= -I * pole,
            None => tail_terms.push(TailTerm {
                power: 1.0,
                coef: I * pole,
            }),
        }
    }
    if boundary {
        for x in &mut tail_terms {
            x.coef = Complex64::new(x.coef.re, 0.0);
        }
    }
    let b_top = *b.last().unwrap();
    let m = table.m_shift as f64;
    let remainder = if m > 1.0 {
        table.remainder * b_top.powf(1.0 - m) / (m - 1.0)
    } else {
        f64::INFINITY
    };
    let half: Vec<usize> = (0..b.len())
        .step_by(2)
        .chain(b.len().is_multiple_of(2).then(|| b.len() - 1))
        .collect();
    let b_half: Vec<f64> = half.iter().map(|&k| b[k]).collect();
    let g_half: Vec<Complex64> = half.iter().map(|&k| g[k]).collect();
    let (p, q) = regime.stub_exponents();
    // second fit node near 4·b_min, spread node near 10·b_min
    let near = |f: f64| b.partition_point(|&x| x < f * b[0]).clamp(1, b.len() - 1);
    let (k_fit, k_alt) = (near(4.0), near(10.0));
    let log_models = if boundary {
        let re: Vec<f64> = g.iter().map(|x| x.re).collect();
        Some((LogModel::fit(b, &re, 30.0)?, LogModel::fit(b, &re, 10.0)?))
    } else {
        None
    };
    let points = t_grid
        .iter()
        .map(|&t| {
            if b[0] * t > STUB_MAX_PHASE {
                return Err(Error::Sampling(format!(
                    "b_min·t = {} is too large for the stub",
                    b[0] * t
                )));
            }
            let stub_at = |k: usize| -> Complex64 {
                if let Some((fit, alt)) = &log_models {
                    let model = if k == k_fit { fit } else { alt };
                    return Complex64::new(model.stub(b[0], t), 0.0);
                }
                match q {
                    None => g[k] / b[k].powf(p) * power_stub(p, b[0], t),
                    Some(q) => {
                        // c b^p + d b^q through nodes 0 and k
                        let (b0, b1) = (b[0], b[k]);
                        let det = b0.powf(p) * b1.powf(q) - b1.powf(p) * b0.powf(q);
                        let c = (g[0] * b1.powf(q) - g[k] * b0.powf(q)) / det;
                        let d = (g[k] * b0.powf(p) - g[0] * b1.powf(p)) / det;
                        c * power_stub(p, b0, t) + d * power_stub(q, b0, t)
                    }
                }
            };
            let (stub, alt) = if q.is_some() || boundary {
                (stub_at(k_fit), stub_at(k_alt))
            } else {
                (stub_at(0), stub_at(1))
            };
            let panels = filon(b, &g, t, 0);
            let shifted = (1..3)
                .map(|o| (filon(b, &g, t, o) - panels).re.abs())
                .fold(0.0, f64::max);
            let halved = (filon(&b_half, &g_half, t, 0) - panels).re.abs();
            let parts = Parts {
                stub,
                stub_spread: (alt - stub).re.abs(),
                panels,
                panels_spread: halved.max(2.0 * shifted),
                tail: tail_integral(&tail_terms, b_top, t),
            };
            let scale = regime.scale();
            let value = pole + scale * (parts.stub + parts.panels + parts.tail).re;
            let error = scale * (parts.stub_spread + parts.panels_spread + remainder);
            Ok(CurvePoint { t, value, error })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationCurve::new(Source::Renewal, points))
}

/// [`invert`] for synthetic tables; the curve is labelled as such.
pub fn invert_synthetic(plan: &InversionPlan, table: &SampleTable, t_grid: &[f64]) -> Result<CorrelationCurve> {
    let c = invert(plan, table, t_grid)?;
    Ok(CorrelationCurve::new(Source::Synthetic, c.points().to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBRow {
    pub b: f64,
    /// `ρ̂(ib)·c₀·b^β`.
    pub scaled: Complex64,
    /// `|scaled - prediction| / |prediction|`.
    pub deviation: f64,
}

/// `ρ̂(ib)·c₀·b^β` against `prediction = c_β^{-1} v̄w̄` at the three smallest `b`.
pub fn small_b_limit_check(table: &SampleTable, beta: f64, c0: f64, prediction: Complex64) -> Result<Vec<SmallBRow>> {
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::Regime(format!("small-b limit needs 1/2 < β < 1, got {beta}")));
    }
    let mut idx: Vec<usize> = (0..table.b.len()).collect();
    idx.sort_by(|&a, &b| table.b[a].total_cmp(&table.b[b]));
    Ok(idx
        .into_iter()
        .take(3)
        .map(|k| {
            let b = table.b[k];
            let scaled = table.values[k] * c0 * b.powf(beta);
            SmallBRow {
                b,
                scaled,
                deviation: (scaled - prediction).norm() / prediction.norm(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_agree_across_branches() {
        for &(w, h) in &[(0.999, 1.0), (1.001, 1.0), (3.0, 0.3), (2.0, 0.5)] {
            let a = moments(w, h);
            let (x, gw) = gauss_legendre(30);
            for k in 0..4 {
                let q: Complex64 = x
                    .iter()
                    .zip(&gw)
                    .map(|(xq, wq)| {
                        let y = 0.5 * h * (xq + 1.0);
                        (I * w * y).exp() * y.powi(k as i32) * (0.5 * h * wq)
                    })
                    .sum();
                assert!((a[k] - q).norm() < 1e-13, "w={w} h={h} k={k}");
            }
        }
    }

    #[test]
    fn filon_is_exact_on_cubics() {
        let b: Vec<f64> = (0..11).map(|k| 0.3 * (k as f64).powf(1.3)).collect();
        let g: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x * x * x - x, 2.0)).collect();
        let t = 7.0;
        let got = filon(&b, &g, t, 0);
        assert!((filon(&b, &g, t, 2) - got).norm() < 1e-10);
        let (x, w) = gauss_legendre(40);
        let (lo, hi) = (b[0], b[10]);
        let panels = 40;
        let h = (hi - lo) / panels as f64;
        let mut want = ZERO;
        for p in 0..panels {
            for (xq, wq) in x.iter().zip(&w) {
                let y = lo + h * p as f64 + 0.5 * h * (xq + 1.0);
                want += (I * y * t).exp() * Complex64::new(y * y * y - y, 2.0) * (0.5 * h * wq);
            }
        }
        assert!((got - want).norm() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn grid_is_increasing_and_guarded() {
        let plan = InversionPlan::new(InversionRegime::Regular);
        let b = plan.b_grid();
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert!((b[0] - 1e-4).abs() < 1e-18 && (b.last().unwrap() - 50.0).abs() < 1e-12);
        plan.check_sampling(&b, &[0.5, 3.0, 10.0, 1e4]).unwrap();
        let coarse: Vec<f64> = (0..=50).map(|k| 1e-4 + k as f64).collect();
        assert!(plan.check_sampling(&coarse, &[2.0]).is_err());
    }

    #[test]
    fn plan_bounds() {
        let mut plan = InversionPlan::new(InversionRegime::Regular);
        plan.per_decade = 8;
        assert!(plan.validate().is_err());
        let mut plan = InversionPlan::new(InversionRegime::Infinite { beta: 1.2 });
        assert!(plan.validate().is_err());
        plan.regime = InversionRegime::Infinite { beta: 0.5 };
        plan.b_max = 5.0;
        assert!(plan.validate().is_err());
    }
}
