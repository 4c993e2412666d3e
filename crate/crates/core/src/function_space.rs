//! Collocation grids on `Y = [1/2, 1]` and the fiber coordinate `u ∈ [0, 1]`,
//! grid functions on `Y` and `Ỹ = Y × [0, 1]`, and the observable presets.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const Y_LEFT: f64 = 0.5;
pub const Y_RIGHT: f64 = 1.0;

/// Chebyshev points of the second kind mapped to `[1/2, 1]`, with
/// barycentric and Clenshaw-Curtis weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridY {
    nodes: Vec<f64>,
    bary: Vec<f64>,
    quad: Vec<f64>,
}

impl GridY {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("GridY needs at least 3 nodes, got {n}")));
        }
        let deg = n - 1;
        let mid = 0.5 * (Y_LEFT + Y_RIGHT);
        let half = 0.5 * (Y_RIGHT - Y_LEFT);
        let mut nodes: Vec<f64> = (0..n)
            .map(|k| mid - half * (PI * k as f64 / deg as f64).cos())
            .collect();
        nodes[0] = Y_LEFT;
        nodes[deg] = Y_RIGHT;
        if deg.is_multiple_of(2) {
            nodes[deg / 2] = mid;
        }
        let bary = (0..n)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                if k == 0 || k == deg {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        let quad = clenshaw_curtis(deg).into_iter().map(|w| w * half).collect();
        Ok(Self { nodes, bary, quad })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn bary_weights(&self) -> &[f64] {
        &self.bary
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad
    }

    /// Values of all cardinal functions `L_j(x)` written into `out`.
    /// Exact unit vectors at the nodes.
    pub fn cardinals_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.nodes.len());
        if let Some(k) = self.node_index(x) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[k] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for ((o, &xj), &wj) in out.iter_mut().zip(&self.nodes).zip(&self.bary) {
            let t = wj / (x - xj);
            *o = t;
            denom += t;
        }
        let inv = 1.0 / denom;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    fn node_index(&self, x: f64) -> Option<usize> {
        // nodes are increasing; exact equality only
        let idx = self.nodes.partition_point(|&v| v < x);
        (idx < self.nodes.len() && self.nodes[idx] == x).then_some(idx)
    }

    /// Barycentric interpolation of real nodal values.
    pub fn interp_real(&self, values: &[f64], x: f64) -> f64 {
        if let Some(k) = self.node_index(x) {
            return values[k];
        }
        let (mut num, mut den) = (0.0, 0.0);
        for ((&xj, &wj), &fj) in self.nodes.iter().zip(&self.bary).zip(values) {
            let t = wj / (x - xj);
            num += t * fj;
            den += t;
        }
        num / den
    }

    pub fn interp_complex(&self, values: &[Complex64], x: f64) -> Complex64 {
        if let Some(k) = self.node_index(x) {
            return values[k];
        }
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for ((&xj, &wj), &fj) in self.nodes.iter().zip(&self.bary).zip(values) {
            let t = wj / (x - xj);
            num += fj * t;
            den += t;
        }
        num / den
    }

    /// Row `i` of the barycentric differentiation matrix.
    pub fn diff_row(&self, i: usize) -> Vec<f64> {
        let n = self.nodes.len();
        let mut row = vec![0.0; n];
        let mut diag = 0.0;
        for j in 0..n {
            if j != i {
                let d = (self.bary[j] / self.bary[i]) / (self.nodes[i] - self.nodes[j]);
                row[j] = d;
                diag -= d;
            }
        }
        row[i] = diag;
        row
    }

    /// Row `i` of the second-derivative matrix `D²`.
    pub fn diff2_row(&self, i: usize) -> Vec<f64> {
        let first = self.diff_row(i);
        let mut row = vec![0.0; self.len()];
        for (k, &d) in first.iter().enumerate() {
            if d != 0.0 {
                for (r, e) in row.iter_mut().zip(self.diff_row(k)) {
                    *r += d * e;
                }
            }
        }
        row
    }
}

/// Clenshaw-Curtis weights on `[-1, 1]` for the `deg + 1` Chebyshev extreme points.
fn clenshaw_curtis(deg: usize) -> Vec<f64> {
    let n = deg as f64;
    (0..=deg)
        .map(|k| {
            let theta = PI * k as f64 / n;
            let mut s = 0.0;
            for j in 1..=deg / 2 {
                let b = if 2 * j == deg { 1.0 } else { 2.0 };
                s += b / (4.0 * (j * j) as f64 - 1.0) * (2.0 * j as f64 * theta).cos();
            }
            let c = if k == 0 || k == deg { 1.0 } else { 2.0 };
            c / n * (1.0 - s)
        })
        .collect()
}

/// Uniform fiber grid on `[0, 1]` with composite Simpson weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridU {
    nodes: Vec<f64>,
    simpson: Vec<f64>,
}

impl GridU {
    /// `intervals` must be even; the grid has `intervals + 1` points.
    pub fn new(intervals: usize) -> Result<Self> {
        if intervals < 4 || !intervals.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "GridU needs an even interval count >= 4, got {intervals}"
            )));
        }
        let h = 1.0 / intervals as f64;
        let nodes: Vec<f64> = (0..=intervals).map(|k| k as f64 * h).collect();
        let simpson = (0..=intervals)
            .map(|k| {
                let c = if k == 0 || k == intervals {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        Ok(Self { nodes, simpson })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.simpson
    }

    /// Indices of the four nodes used for cubic interpolation around `u`.
    pub fn cubic_stencil(&self, u: f64) -> [usize; 4] {
        let m = self.intervals();
        let cell = ((u / self.step()).floor() as isize).clamp(0, m as isize - 1) as usize;
        let start = cell.saturating_sub(1).min(m - 3);
        [start, start + 1, start + 2, start + 3]
    }

    pub fn cubic_weights(&self, u: f64) -> ([usize; 4], [f64; 4]) {
        let idx = self.cubic_stencil(u);
        let xs = idx.map(|k| self.nodes[k]);
        let mut w = [0.0; 4];
        for a in 0..4 {
            let mut l = 1.0;
            for b in 0..4 {
                if a != b {
                    l *= (u - xs[b]) / (xs[a] - xs[b]);
                }
            }
            w[a] = l;
        }
        (idx, w)
    }
}

/// Which set a [`GridFunction`] lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Y,
    /// `Ỹ = Y × [0, 1]`, stored fiber by fiber.
    Tilde,
}

/// Complex values at collocation nodes. On `Ỹ` the layout is fiber-major:
/// entry `(i, k)` sits at `k * n_y + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    domain: Domain,
    n_y: usize,
    n_u: usize,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn on_y(values: Vec<Complex64>) -> Self {
        let n_y = values.len();
        Self {
            domain: Domain::Y,
            n_y,
            n_u: 1,
            values,
        }
    }

    pub fn on_y_real(values: &[f64]) -> Self {
        Self::on_y(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn on_tilde(n_y: usize, n_u: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != n_y * n_u {
            return Err(Error::InvalidArgument(format!(
                "Ỹ grid function needs {} values, got {}",
                n_y * n_u,
                values.len()
            )));
        }
        Ok(Self {
            domain: Domain::Tilde,
            n_y,
            n_u,
            values,
        })
    }

    pub fn sample_y(grid: &GridY, f: impl Fn(f64) -> Complex64) -> Self {
        Self::on_y(grid.nodes().iter().map(|&y| f(y)).collect())
    }

    pub fn sample_tilde(gy: &GridY, gu: &GridU, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let mut values = Vec::with_capacity(gy.len() * gu.len());
        for &u in gu.nodes() {
            for &y in gy.nodes() {
                values.push(f(y, u));
            }
        }
        Self {
            domain: Domain::Tilde,
            n_y: gy.len(),
            n_u: gu.len(),
            values,
        }
    }

    /// Reassemble a `Ỹ` function from its fibers.
    pub fn from_fibers(fibers: &[GridFunction]) -> Result<Self> {
        let n_y = fibers.first().map(|f| f.len()).unwrap_or(0);
        let mut values = Vec::with_capacity(n_y * fibers.len());
        for f in fibers {
            if f.domain != Domain::Y || f.len() != n_y {
                return Err(Error::InvalidArgument("fibers must share one Y grid".into()));
            }
            values.extend_from_slice(&f.values);
        }
        Self::on_tilde(n_y, fibers.len(), values)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn at(&self, i: usize, k: usize) -> Complex64 {
        self.values[k * self.n_y + i]
    }

    /// The `u_index`-th slice `v^u` as a borrowed view.
    pub fn fiber_slice(&self, u_index: usize) -> Result<&[Complex64]> {
        self.require(Domain::Tilde)?;
        if u_index >= self.n_u {
            return Err(Error::InvalidArgument(format!(
                "fiber index {u_index} out of range (n_u = {})",
                self.n_u
            )));
        }
        Ok(&self.values[u_index * self.n_y..(u_index + 1) * self.n_y])
    }

    /// The `u_index`-th slice `v^u` as an owned function on `Y`.
    pub fn fiber(&self, u_index: usize) -> Result<GridFunction> {
        Ok(GridFunction::on_y(self.fiber_slice(u_index)?.to_vec()))
    }

    pub fn require(&self, domain: Domain) -> Result<()> {
        if self.domain == domain {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "expected a grid function on {:?}, got {:?}",
                domain, self.domain
            )))
        }
    }

    /// Off-grid evaluation on `Y`.
    pub fn eval_y(&self, grid: &GridY, y: f64) -> Result<Complex64> {
        self.require(Domain::Y)?;
        Ok(grid.interp_complex(&self.values, y))
    }

    /// Off-grid evaluation on `Ỹ`: barycentric in `y`, cubic in `u`.
    pub fn eval_tilde(&self, gy: &GridY, gu: &GridU, y: f64, u: f64) -> Result<Complex64> {
        self.require(Domain::Tilde)?;
        let (idx, w) = gu.cubic_weights(u);
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, wk) in idx.iter().zip(w) {
            acc += gy.interp_complex(self.fiber_slice(*k)?, y) * wk;
        }
        Ok(acc)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// CSV rows `(node, real, imag)`; on `Ỹ` the node columns are `y,u`.
    pub fn write_csv<W: Write>(&self, gy: &GridY, gu: Option<&GridU>, mut out: W) -> Result<()> {
        match self.domain {
            Domain::Y => {
                writeln!(out, "y,real,imag")?;
                for (y, v) in gy.nodes().iter().zip(&self.values) {
                    writeln!(out, "{y:.17e},{:.17e},{:.17e}", v.re, v.im)?;
                }
            }
            Domain::Tilde => {
                let gu = gu.ok_or_else(|| Error::InvalidArgument("Ỹ export needs the u grid".into()))?;
                writeln!(out, "y,u,real,imag")?;
                for (k, u) in gu.nodes().iter().enumerate() {
                    for (i, y) in gy.nodes().iter().enumerate() {
                        let v = self.at(i, k);
                        writeln!(out, "{y:.17e},{u:.17e},{:.17e},{:.17e}", v.re, v.im)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// `∫_Y g dLeb` or, with a density, `∫_Y g h dLeb`.
pub fn integrate_y(grid: &GridY, g: &GridFunction, density: Option<&[f64]>) -> Result<Complex64> {
    g.require(Domain::Y)?;
    if g.len() != grid.len() {
        return Err(Error::InvalidArgument("grid function does not match GridY".into()));
    }
    Ok(integrate_y_slice(grid, g.values(), density))
}

pub(crate) fn integrate_y_slice(grid: &GridY, g: &[Complex64], density: Option<&[f64]>) -> Complex64 {
    match density {
        Some(h) => g
            .iter()
            .zip(grid.quad_weights())
            .zip(h)
            .map(|((v, w), hh)| v * (w * hh))
            .sum(),
        None => g.iter().zip(grid.quad_weights()).map(|(v, w)| v * *w).sum(),
    }
}

/// `∫_Y ∫_0^1 g(y, u) du dμ(y)`.
pub fn integrate_tilde(gy: &GridY, gu: &GridU, g: &GridFunction, density: &[f64]) -> Result<Complex64> {
    g.require(Domain::Tilde)?;
    if g.n_y() != gy.len() || g.n_u() != gu.len() {
        return Err(Error::InvalidArgument("grid function does not match Ỹ grids".into()));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, wu) in gu.weights().iter().enumerate() {
        acc += integrate_y_slice(gy, g.fiber_slice(k)?, Some(density)) * *wu;
    }
    Ok(acc)
}

/// The fiber bump `χ(u) = c·exp(-1/(u(1-u)))` on `(0, 1)`, normalized to unit
/// integral, and its derivatives.
pub fn bump(u: f64, order: usize) -> f64 {
    if u <= 2e-3 || u >= 1.0 - 2e-3 {
        return 0.0;
    }
    bump_derivatives(u, order)[order] / bump_mass()
}

fn bump_derivatives(u: f64, order: usize) -> Vec<f64> {
    // χ = exp(g), g = -(1/u + 1/(1-u)); χ^{(k+1)} = Σ_j C(k,j) g^{(j+1)} χ^{(k-j)}
    let g_der = |m: usize| -> f64 {
        let fact: f64 = (1..=m).map(|q| q as f64).product();
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        -(sign * fact * u.powi(-(m as i32) - 1) + fact * (1.0 - u).powi(-(m as i32) - 1))
    };
    let mut chi = vec![(-1.0 / (u * (1.0 - u))).exp()];
    for k in 0..order {
        let mut next = 0.0;
        let mut binom = 1.0;
        for j in 0..=k {
            next += binom * g_der(j + 1) * chi[k - j];
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
        chi.push(next);
    }
    chi
}

fn bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        let panels = 400;
        let (nodes, weights) = gauss_legendre(16);
        let h = 1.0 / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let a = p as f64 * h;
            for (x, w) in nodes.iter().zip(&weights) {
                let u = a + 0.5 * h * (x + 1.0);
                acc += 0.5 * h * w * (-1.0 / (u * (1.0 - u))).exp();
            }
        }
        acc
    })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Profile of an observable along `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YProfile {
    One,
    /// `2y`
    Linear,
    /// `1 + cos(2π y)/2`
    Cos,
    /// `cos(4π y)`, a profile with small mean against most densities.
    Oscillating,
}

impl YProfile {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "one" => Ok(Self::One),
            "linear" => Ok(Self::Linear),
            "cos" => Ok(Self::Cos),
            "oscillating" => Ok(Self::Oscillating),
            other => Err(Error::Config(format!("unknown observable profile '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::One => "one",
            Self::Linear => "linear",
            Self::Cos => "cos",
            Self::Oscillating => "oscillating",
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Linear => 2.0 * y,
            Self::Cos => 1.0 + 0.5 * (2.0 * PI * y).cos(),
            Self::Oscillating => (4.0 * PI * y).cos(),
        }
    }
}

/// Separable observable `(y, u) ↦ (profile(y) - shift)·χ^{(order)}(u)` on `Ỹ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub profile: YProfile,
    /// Subtracted from the profile; used to build mean-zero observables.
    pub shift: f64,
    pub scale: f64,
    /// Derivative order of the fiber bump (flow-direction derivative).
    pub order: usize,
}

impl Observable {
    pub fn new(profile: YProfile) -> Self {
        Self {
            profile,
            shift: 0.0,
            scale: 1.0,
            order: 0,
        }
    }

    pub fn derivative(self, extra: usize) -> Self {
        Self {
            order: self.order + extra,
            ..self
        }
    }

    pub fn y_part(&self, y: f64) -> f64 {
        self.scale * (self.profile.eval(y) - self.shift)
    }

    pub fn eval(&self, y: f64, u: f64) -> f64 {
        self.y_part(y) * bump(u, self.order)
    }

    pub fn sample(&self, gy: &GridY, gu: &GridU) -> GridFunction {
        GridFunction::sample_tilde(gy, gu, |y, u| Complex64::new(self.eval(y, u), 0.0))
    }

    pub fn sup_bound(&self) -> f64 {
        let ys = (0..=512)
            .map(|k| self.y_part(0.5 + 0.5 * k as f64 / 512.0).abs())
            .fold(0.0, f64::max);
        let us = (0..=2048)
            .map(|k| bump(k as f64 / 2048.0, self.order).abs())
            .fold(0.0, f64::max);
        ys * us
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn grid_y_basics() {
        let g = GridY::new(33).unwrap();
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.nodes()[0], 0.5);
        assert_eq!(g.nodes()[32], 1.0);
        // polynomial exactness up to degree n-1
        for p in 0..33 {
            let f = GridFunction::sample_y(&g, |y| c(y.powi(p)));
            let exact = (1.0 - 0.5f64.powi(p + 1)) / (p as f64 + 1.0);
            assert!(
                (integrate_y(&g, &f, None).unwrap().re - exact).abs() < 1e-12,
                "degree {p}"
            );
        }
        let lin = GridFunction::sample_y(&g, c);
        assert!((integrate_y(&g, &lin, None).unwrap().re - 0.375).abs() < 1e-15);
    }

    #[test]
    fn interpolation_consistency() {
        let g = GridY::new(64).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|y| (3.0 * y).sin()).collect();
        for (k, &y) in g.nodes().iter().enumerate() {
            assert_eq!(g.interp_real(&vals, y), vals[k]);
        }
        let y = 0.61234;
        assert!((g.interp_real(&vals, y) - (3.0 * y).sin()).abs() < 1e-13);
        let mut card = vec![0.0; 64];
        g.cardinals_into(y, &mut card);
        assert!((card.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn differentiation_row() {
        let g = GridY::new(40).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|y| (2.0 * y).exp()).collect();
        let row = g.diff_row(0);
        let d: f64 = row.iter().zip(&vals).map(|(a, b)| a * b).sum();
        assert!((d - 2.0 * 1f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn quadrature_refinement() {
        let f = |y: f64| c((5.0 * y).cos() * y.exp());
        let a = GridY::new(32).unwrap();
        let b = GridY::new(64).unwrap();
        let ia = integrate_y(&a, &GridFunction::sample_y(&a, f), None).unwrap();
        let ib = integrate_y(&b, &GridFunction::sample_y(&b, f), None).unwrap();
        assert!((ia - ib).norm() < 1e-10);
    }

    #[test]
    fn grid_u_simpson() {
        let gu = GridU::new(64).unwrap();
        assert_eq!(gu.nodes()[0], 0.0);
        assert_eq!(gu.nodes()[64], 1.0);
        assert!((gu.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(GridU::new(63).is_err());
    }

    #[test]
    fn bump_properties() {
        let gu = GridU::new(256).unwrap();
        let mass: f64 = gu.nodes().iter().zip(gu.weights()).map(|(u, w)| w * bump(*u, 0)).sum();
        assert!((mass - 1.0).abs() < 1e-8);
        assert_eq!(bump(0.0, 0), 0.0);
        assert_eq!(bump(1.0, 3), 0.0);
        // derivatives against finite differences
        for order in 0..5 {
            for u in [0.2, 0.37, 0.5, 0.81] {
                let h = 1e-5;
                let fd = (bump(u + h, order) - bump(u - h, order)) / (2.0 * h);
                let an = bump(u, order + 1);
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + an.abs()),
                    "order {order} u {u}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn tilde_integration_and_fibers() {
        let gy = GridY::new(32).unwrap();
        let gu = GridU::new(64).unwrap();
        let h: Vec<f64> = gy.nodes().iter().map(|_| 2.0).collect(); // uniform density on Y
        let one = GridFunction::sample_tilde(&gy, &gu, |_, _| c(1.0));
        assert!((integrate_tilde(&gy, &gu, &one, &h).unwrap().re - 1.0).abs() < 1e-12);
        let chi = GridFunction::sample_tilde(&gy, &gu, |_, u| c(bump(u, 0)));
        let chi_mass: f64 = gu.nodes().iter().zip(gu.weights()).map(|(u, w)| w * bump(*u, 0)).sum();
        assert!((integrate_tilde(&gy, &gu, &chi, &h).unwrap().re - chi_mass).abs() < 1e-12);
        // Fubini for a product
        let v0 = |y: f64| 1.0 + y * y;
        let prod = GridFunction::sample_tilde(&gy, &gu, |y, u| c(v0(y) * bump(u, 0)));
        let iy = integrate_y(&gy, &GridFunction::sample_y(&gy, |y| c(v0(y))), Some(&h)).unwrap();
        assert!((integrate_tilde(&gy, &gu, &prod, &h).unwrap() - iy * chi_mass).norm() < 1e-12);
        // fibers
        let vu = GridFunction::sample_tilde(&gy, &gu, |_, u| c(u));
        let f5 = vu.fiber(5).unwrap();
        assert!(f5.values().iter().all(|v| *v == c(gu.nodes()[5])));
        let fibers: Vec<_> = (0..gu.len()).map(|k| prod.fiber(k).unwrap()).collect();
        assert_eq!(GridFunction::from_fibers(&fibers).unwrap(), prod);
        assert!(prod.fiber(gu.len()).is_err());
        let on_y = GridFunction::sample_y(&gy, |_| c(1.0));
        assert!(integrate_tilde(&gy, &gu, &on_y, &h).is_err());
        assert!(on_y.fiber(0).is_err());
    }
}
