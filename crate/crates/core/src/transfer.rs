//! Collocation matrices of the `μ`-transfer operator `R` of the induced map
//! and its roof-weighted variants, leading-eigenvalue tracking and resolvent
//! solves.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::asymptotics::{fit_loglog, PowerLawFit};
use crate::error::{Error, Result};
use crate::function_space::{Domain, GridFunction};
use crate::induced::InducedSystem;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pivot magnitude below which `I - R̂₀(s)` is treated as singular.
pub const PIVOT_FLOOR: f64 = 1e-13;

/// The function of the roof inserted in `R(ψ(φ)·)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoofWeight {
    /// `e^{-sφ}`, the twisted operator `R̂₀(s)`.
    Twist { s: Complex64 },
    /// `e^{-s(φ∧k)}`.
    TruncatedTwist { s: Complex64, k: f64 },
    /// `(φ - k)^+`.
    Excess { k: f64 },
    /// `(e^{-s(φ∧k)} - e^{-sφ})/s`, so that `Ĉ(s) = R(ψ·)`.
    TwistGap { s: Complex64, k: f64 },
}

impl RoofWeight {
    pub fn frequency(&self) -> Complex64 {
        match *self {
            Self::Twist { s } | Self::TruncatedTwist { s, .. } | Self::TwistGap { s, .. } => s,
            Self::Excess { .. } => ZERO,
        }
    }

    fn check(&self) -> Result<()> {
        let s = self.frequency();
        if !(s.re >= 0.0) || !s.im.is_finite() {
            return Err(Error::LeftHalfPlane(s.re));
        }
        if let Self::TwistGap { s, .. } = self {
            if *s == ZERO {
                return Err(Error::InvalidArgument("TwistGap needs s != 0; use Excess".into()));
            }
        }
        Ok(())
    }

    #[inline]
    fn eval(&self, phi: f64) -> Complex64 {
        match *self {
            Self::Twist { s } => (-s * phi).exp(),
            Self::TruncatedTwist { s, k } => (-s * phi.min(k)).exp(),
            Self::Excess { k } => Complex64::new((phi - k).max(0.0), 0.0),
            Self::TwistGap { s, k } => {
                if phi <= k {
                    ZERO
                } else {
                    // e^{-sk}(1 - e^{-s(φ-k)})/s without cancellation
                    let z = -s * (phi - k);
                    (-s * k).exp() * (-expm1(z) / s)
                }
            }
        }
    }
}

/// `e^z - 1` accurate for small `|z|`.
fn expm1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-3 {
        // four terms reach double precision here
        z * (ONE + z / 2.0 * (ONE + z / 3.0 * (ONE + z / 4.0 * (ONE + z / 5.0))))
    } else {
        let re = z.re.exp_m1();
        let (sn, cs) = z.im.sin_cos();
        // e^{a}cos b - 1 = (e^a - 1)cos b + (cos b - 1)
        let cos_m1 = -2.0 * (0.5 * z.im).sin().powi(2);
        Complex64::new(re * cs + cos_m1, (re + 1.0) * sn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorMeta {
    pub n_max: usize,
    pub deep_tail: bool,
    pub n_y: usize,
    pub weight: RoofWeight,
}

/// Dense `n_y × n_y` collocation matrix of `v ↦ R(ψ(φ)v)` on the `Y` grid.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    s: Complex64,
    entries: DMatrix<Complex64>,
    /// `ℓ_j = c_j h(y_j)`: quadrature weights of `∫ · dμ`.
    mu_weights: Vec<f64>,
    meta: OperatorMeta,
}

impl OperatorMatrix {
    pub fn s(&self) -> Complex64 {
        self.s
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn meta(&self) -> &OperatorMeta {
        &self.meta
    }

    pub fn mu_weights(&self) -> &[f64] {
        &self.mu_weights
    }

    pub fn n_y(&self) -> usize {
        self.meta.n_y
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let x = DVector::from_column_slice(v);
        (&self.entries * x).as_slice().to_vec()
    }

    pub fn apply_fn(&self, v: &GridFunction) -> Result<GridFunction> {
        v.require(Domain::Y)?;
        self.check_len(v.len())?;
        Ok(GridFunction::on_y(self.apply(v.values())))
    }

    /// `∫ g dμ` by the grid quadrature.
    pub fn mu_integral(&self, g: &[Complex64]) -> Complex64 {
        g.iter().zip(&self.mu_weights).map(|(v, w)| v * *w).sum()
    }

    /// Linear combination `a·self + b·other` of matrices on the same grid.
    pub fn combine(&self, a: Complex64, other: &OperatorMatrix, b: Complex64) -> Result<OperatorMatrix> {
        self.check_len(other.n_y())?;
        Ok(OperatorMatrix {
            s: self.s,
            entries: &self.entries * a + &other.entries * b,
            mu_weights: self.mu_weights.clone(),
            meta: self.meta.clone(),
        })
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.meta.n_y {
            return Err(Error::InvalidArgument(format!(
                "vector of length {n} does not match operator of size {}",
                self.meta.n_y
            )));
        }
        Ok(())
    }

    /// CSV `i,j,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,re,im")?;
        for i in 0..self.meta.n_y {
            for j in 0..self.meta.n_y {
                let e = self.entries[(i, j)];
                writeln!(out, "{i},{j},{:.17e},{:.17e}", e.re, e.im)?;
            }
        }
        Ok(())
    }
}

/// `R̂₀(s)v = R(e^{-sφ}v)` on the grid.
pub fn assemble_twisted(system: &InducedSystem, s: Complex64) -> Result<OperatorMatrix> {
    assemble(system, &[RoofWeight::Twist { s }]).map(|mut v| v.remove(0))
}

/// Twisted operators for several frequencies sharing one pass over the cylinders.
pub fn assemble_twisted_batch(system: &InducedSystem, s: &[Complex64]) -> Result<Vec<OperatorMatrix>> {
    let weights: Vec<RoofWeight> = s.iter().map(|&s| RoofWeight::Twist { s }).collect();
    assemble(system, &weights)
}

/// `R(ψ(φ)·)` for each weight.
///
/// Entry `(i, j)` is `Σ_n w_n(y_i) ψ(φ(y_{a_n})) L_j(y_{a_n})` with the
/// `μ`-branch weight `w_n`. Cylinders past `n_max` enter through a second-order
/// expansion of `h·v` about `y = 1/2`.
pub fn assemble(system: &InducedSystem, weights: &[RoofWeight]) -> Result<Vec<OperatorMatrix>> {
    for w in weights {
        w.check()?;
    }
    let n_y = system.n_y();
    let n_max = system.n_max();
    let grid = system.grid();
    let h = system.density();
    let (y_a, wleb, phi, h_at) = system.raw();

    let deep_rows = deep_coefficients(system, weights)?;

    let nk = weights.len();
    let mut re = vec![0.0; nk * n_y * n_y];
    let mut im = vec![0.0; nk * n_y * n_y];
    let mut card = vec![0.0; n_y];
    let mut coef = vec![ZERO; nk];
    for n in 1..=n_max {
        let base = (n - 1) * n_y;
        for i in 0..n_y {
            let idx = base + i;
            let w = wleb[idx] * h_at[idx] / h[i];
            for (c, k) in coef.iter_mut().zip(weights) {
                *c = k.eval(phi[idx]) * w;
            }
            grid.cardinals_into(y_a[idx], &mut card);
            for (kk, c) in coef.iter().enumerate() {
                let off = (kk * n_y + i) * n_y;
                let row_re = &mut re[off..off + n_y];
                for (r, l) in row_re.iter_mut().zip(&card) {
                    *r += c.re * l;
                }
                if c.im != 0.0 {
                    let row_im = &mut im[off..off + n_y];
                    for (r, l) in row_im.iter_mut().zip(&card) {
                        *r += c.im * l;
                    }
                }
            }
        }
    }

    if let Some(rows) = &deep_rows {
        let drow = grid.diff_row(0);
        let d2row = grid.diff2_row(0);
        let base = (n_max - 1) * n_y;
        for (kk, per_row) in rows.iter().enumerate() {
            for (i, &[a, b, c]) in per_row.iter().enumerate() {
                let q = wleb[base + i] / h[i];
                let off = (kk * n_y + i) * n_y;
                let c0 = a * (q * h[0]);
                re[off] += c0.re;
                im[off] += c0.im;
                for j in 0..n_y {
                    let e = (b * drow[j] + c * (0.5 * d2row[j])) * (q * h[j]);
                    re[off + j] += e.re;
                    im[off + j] += e.im;
                }
            }
        }
    }

    let mu_weights: Vec<f64> = grid.quad_weights().iter().zip(h).map(|(c, h)| c * h).collect();
    Ok(weights
        .iter()
        .enumerate()
        .map(|(kk, w)| {
            let off = kk * n_y * n_y;
            let entries = DMatrix::from_fn(n_y, n_y, |i, j| {
                Complex64::new(re[off + i * n_y + j], im[off + i * n_y + j])
            });
            OperatorMatrix {
                s: w.frequency(),
                entries,
                mu_weights: mu_weights.clone(),
                meta: OperatorMeta {
                    n_max,
                    deep_tail: deep_rows.is_some(),
                    n_y,
                    weight: *w,
                },
            }
        })
        .collect())
}

/// Per weight and row, the deep-cylinder sums `Σ_n r_n δ_n^p ψ` (`p = 0, 1, 2`)
/// evaluated at `φ = φ_N(y_i) + Δ_n`.
type DeepRows = Vec<Vec<[Complex64; 3]>>;

fn deep_coefficients(system: &InducedSystem, weights: &[RoofWeight]) -> Result<Option<DeepRows>> {
    let Some(deep) = system.deep() else {
        return Ok(None);
    };
    let n_y = system.n_y();
    let n_max = system.n_max();
    let phi_n: Vec<f64> = (0..n_y).map(|i| system.roof_value(n_max, i)).collect();
    let phi_n_min = phi_n.iter().copied().fold(f64::INFINITY, f64::min);
    let mass = deep.mass_sums().map(|v| Complex64::new(v, 0.0));
    let need_below = |k: f64| -> Result<()> {
        if k >= phi_n_min {
            return Err(Error::InvalidArgument(format!(
                "truncation level {k} reaches the aggregated cylinders (min roof {phi_n_min:.3}); raise n_max"
            )));
        }
        Ok(())
    };
    let mut out = Vec::with_capacity(weights.len());
    for w in weights {
        let rows: Vec<[Complex64; 3]> = match *w {
            RoofWeight::Twist { s } => {
                let sums = deep.laplace_sums(s);
                phi_n
                    .iter()
                    .map(|&p| {
                        let e = (-s * p).exp();
                        sums.map(|v| e * v)
                    })
                    .collect()
            }
            RoofWeight::TruncatedTwist { s, k } => {
                need_below(k)?;
                let e = (-s * k).exp();
                vec![mass.map(|v| e * v); n_y]
            }
            RoofWeight::Excess { k } => {
                need_below(k)?;
                let first = deep
                    .first_moment_sums()
                    .ok_or_else(|| Error::Regime("the roof has no first moment for β ≤ 1".into()))?;
                phi_n
                    .iter()
                    .map(|&p| std::array::from_fn(|q| mass[q] * (p - k) + first[q]))
                    .collect()
            }
            RoofWeight::TwistGap { s, k } => {
                need_below(k)?;
                let sums = deep.laplace_sums(s);
                let ek = (-s * k).exp();
                phi_n
                    .iter()
                    .map(|&p| {
                        let e = (-s * p).exp();
                        std::array::from_fn(|q| (ek * mass[q] - e * sums[q]) / s)
                    })
                    .collect()
            }
        };
        out.push(rows);
    }
    Ok(Some(out))
}

/// Leading eigenpair of a twisted operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralData {
    pub s: Complex64,
    pub lambda: Complex64,
    /// Normalized by `∫ v dμ = 1`.
    pub eigenfunction: GridFunction,
    /// `|λ| - |λ₂|`, with `λ₂` from a deflated power iteration.
    pub gap: f64,
    pub residual: f64,
    pub iterations: usize,
}

const EIG_TOL: f64 = 1e-13;
const EIG_ACCEPT: f64 = 1e-10;
const EIG_MAX_ITER: usize = 5000;

fn norm2(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Power iteration for the dominant eigenvector of `m`; returns `(λ, v, residual, iterations)`.
fn power(m: &DMatrix<Complex64>, start: DVector<Complex64>) -> (Complex64, DVector<Complex64>, f64, usize) {
    let mut v = start;
    let nv = norm2(&v);
    v /= Complex64::new(nv, 0.0);
    let mut lam = ZERO;
    let mut res = f64::INFINITY;
    let mut it = 0;
    while it < EIG_MAX_ITER {
        it += 1;
        let w = m * &v;
        lam = v.dotc(&w);
        let r = &w - &v * lam;
        res = norm2(&r) / lam.norm().max(f64::MIN_POSITIVE);
        let nw = norm2(&w);
        if nw == 0.0 {
            break;
        }
        v = w / Complex64::new(nw, 0.0);
        if res < EIG_TOL {
            break;
        }
    }
    (lam, v, res, it)
}

/// Dominant eigenvalue and eigenfunction of `matrix` by warm-started power
/// iteration, refined by the two-sided Rayleigh quotient.
pub fn leading_eig(matrix: &OperatorMatrix, warm_start: Option<&GridFunction>) -> Result<SpectralData> {
    let n = matrix.n_y();
    let m = matrix.entries();
    let start = match warm_start {
        Some(g) => {
            g.require(Domain::Y)?;
            matrix.check_len(g.len())?;
            DVector::from_column_slice(g.values())
        }
        None => DVector::from_element(n, ONE),
    };
    let lost = || Error::BranchLoss {
        re: matrix.s().re,
        im: matrix.s().im,
    };
    let (lam_r, v, res, iterations) = power(m, start);
    if !(res < EIG_ACCEPT) {
        return Err(lost());
    }
    let ell = DVector::from_iterator(n, matrix.mu_weights().iter().map(|&w| Complex64::new(w, 0.0)));
    let mh = m.adjoint();
    let (_, u, res_left, _) = power(&mh, ell);
    if !(res_left < EIG_ACCEPT) {
        return Err(lost());
    }
    // u^H M v / u^H v
    let denom = u.dotc(&v);
    let lambda = if denom.norm() > 1e-8 {
        u.dotc(&(m * &v)) / denom
    } else {
        lam_r
    };
    let mass = matrix.mu_integral(v.as_slice());
    if mass.norm() < 1e-12 * norm2(&v) {
        return Err(Error::Domain(format!(
            "eigenfunction at s = {} has vanishing μ-integral",
            matrix.s()
        )));
    }
    let eigen: Vec<Complex64> = v.iter().map(|z| z / mass).collect();
    let gap = lambda.norm() - deflated_modulus(m, lambda, &v, &u);
    Ok(SpectralData {
        s: matrix.s(),
        lambda,
        eigenfunction: GridFunction::on_y(eigen),
        gap,
        residual: res.max(res_left),
        iterations,
    })
}

/// Spectral-radius estimate of `M - λ v u^H/(u^H v)` from the growth rate of
/// a deflated power iteration (robust to complex-conjugate pairs).
fn deflated_modulus(m: &DMatrix<Complex64>, lambda: Complex64, v: &DVector<Complex64>, u: &DVector<Complex64>) -> f64 {
    let n = v.len();
    let uv = u.dotc(v);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = DVector::from_fn(n, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let (burn, count) = (40, 120);
    let mut log_growth = 0.0;
    for it in 0..burn + count {
        let proj = u.dotc(&x) / uv;
        let y = m * &x - v * (lambda * proj);
        let ny = norm2(&y);
        let nx = norm2(&x);
        if ny == 0.0 || nx == 0.0 {
            return 0.0;
        }
        if it >= burn {
            log_growth += (ny / nx).ln();
        }
        x = y / Complex64::new(ny, 0.0);
    }
    (log_growth / count as f64).exp()
}

/// Largest eigenvalue jump tolerated between consecutive continuation points.
const MAX_JUMP: f64 = 0.1;
/// Smallest eigenfunction overlap tolerated between consecutive points.
const MIN_OVERLAP: f64 = 0.9;
const MIN_STEP: f64 = 1e-8;

/// Follows the leading eigenvalue from `s = 0` along `s_path`, halving steps
/// whenever the branch is lost. Returns one entry per path point.
pub fn eig_continuation(system: &InducedSystem, s_path: &[Complex64]) -> Result<Vec<SpectralData>> {
    let Some(&first) = s_path.first() else {
        return Ok(Vec::new());
    };
    if first.norm() > 1e-14 {
        return Err(Error::InvalidArgument("continuation path must start at s = 0".into()));
    }
    let mut current = leading_eig(&assemble_twisted(system, first)?, None)?;
    let mut out = vec![current.clone()];
    for &target in &s_path[1..] {
        let mut pending = vec![target];
        while let Some(&next) = pending.last() {
            let step = (next - current.s).norm();
            if step < MIN_STEP {
                return Err(Error::StepUnderflow {
                    re: next.re,
                    im: next.im,
                });
            }
            match try_step(system, &current, next) {
                Ok(data) => {
                    pending.pop();
                    current = data;
                }
                Err(Error::BranchLoss { .. }) => {
                    log::debug!("branch lost stepping to {next}; halving");
                    pending.push(current.s + (next - current.s) * 0.5);
                }
                Err(e) => return Err(e),
            }
        }
        out.push(current.clone());
    }
    Ok(out)
}

fn try_step(system: &InducedSystem, prev: &SpectralData, s: Complex64) -> Result<SpectralData> {
    let matrix = assemble_twisted(system, s)?;
    let data = leading_eig(&matrix, Some(&prev.eigenfunction))?;
    let a = prev.eigenfunction.values();
    let b = data.eigenfunction.values();
    let dot: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let overlap = dot.norm() / (na * nb);
    if (data.lambda - prev.lambda).norm() > MAX_JUMP || overlap < MIN_OVERLAP {
        return Err(Error::BranchLoss { re: s.re, im: s.im });
    }
    Ok(data)
}

/// CSV `s_re,s_im,lambda_re,lambda_im,abs_lambda,gap`.
pub fn write_spectral_csv<W: Write>(data: &[SpectralData], mut out: W) -> Result<()> {
    writeln!(out, "s_re,s_im,lambda_re,lambda_im,abs_lambda,gap")?;
    for d in data {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            d.s.re,
            d.s.im,
            d.lambda.re,
            d.lambda.im,
            d.lambda.norm(),
            d.gap
        )?;
    }
    Ok(())
}

/// LU factorization of `I - R̂₀(s)`, reusable across right-hand sides.
pub struct Resolvent {
    s: Complex64,
    n: usize,
    system: DMatrix<Complex64>,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    min_pivot: f64,
}

impl Resolvent {
    pub fn new(matrix: &OperatorMatrix) -> Result<Self> {
        let s = matrix.s();
        let n = matrix.n_y();
        if s == ZERO {
            return Err(Error::NearSingular {
                re: 0.0,
                im: 0.0,
                pivot: 0.0,
            });
        }
        let system = DMatrix::<Complex64>::identity(n, n) - matrix.entries();
        let lu = system.clone().lu();
        let min_pivot = lu.u().diagonal().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        if !(min_pivot >= PIVOT_FLOOR) {
            return Err(Error::NearSingular {
                re: s.re,
                im: s.im,
                pivot: min_pivot,
            });
        }
        Ok(Self {
            s,
            n,
            system,
            lu,
            min_pivot,
        })
    }

    pub fn s(&self) -> Complex64 {
        self.s
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves `(I - R̂₀(s))g = v`, with one step of iterative refinement if the
    /// residual exceeds `1e-10·(1 + |v|)`.
    pub fn solve(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "right-hand side of length {} for size {}",
                v.len(),
                self.n
            )));
        }
        let rhs = DVector::from_column_slice(v);
        let sup = |x: &DVector<Complex64>| x.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let tol = 1e-10 * (1.0 + sup(&rhs));
        let mut g = self.solve_raw(&rhs)?;
        let mut r = &rhs - &self.system * &g;
        if sup(&r) > tol {
            g += self.solve_raw(&r)?;
            r = &rhs - &self.system * &g;
        }
        let res = sup(&r);
        if res > tol {
            return Err(Error::Convergence {
                what: "resolvent solve",
                iterations: 2,
                residual: res,
            });
        }
        Ok(g.as_slice().to_vec())
    }

    fn solve_raw(&self, rhs: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        self.lu.solve(rhs).ok_or(Error::NearSingular {
            re: self.s.re,
            im: self.s.im,
            pivot: self.min_pivot,
        })
    }

    /// Solves for every column of `rhs` (`n × k`).
    pub fn solve_columns(&self, rhs: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let mut out = DMatrix::zeros(self.n, rhs.ncols());
        for c in 0..rhs.ncols() {
            let col: Vec<Complex64> = rhs.column(c).iter().copied().collect();
            let g = self.solve(&col)?;
            out.column_mut(c).copy_from_slice(&g);
        }
        Ok(out)
    }
}

/// `(I - R̂₀(s))^{-1} v` for the matrix assembled at `s`.
pub fn resolve(matrix: &OperatorMatrix, v: &GridFunction) -> Result<GridFunction> {
    v.require(Domain::Y)?;
    matrix.check_len(v.len())?;
    Ok(GridFunction::on_y(Resolvent::new(matrix)?.solve(v.values())?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub b: f64,
    /// Lower bound for the sup-norm of `(I - R̂₀(ib))^{-1}`; infinite when singular.
    pub norm: f64,
    pub min_pivot: f64,
    pub near_singular: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
    /// Growth exponent of the norm in `b` over the regular rows.
    pub exponent: Option<PowerLawFit>,
}

impl ProbeTable {
    /// CSV `b,norm,min_pivot,near_singular`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "b,norm,min_pivot,near_singular")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{}",
                r.b, r.norm, r.min_pivot, r.near_singular
            )?;
        }
        Ok(())
    }
}

/// Pivots below this (relative to 1) are flagged without aborting the probe.
const PIVOT_WARN: f64 = 1e-8;

/// Power iteration on unit-modulus probes; returns the largest `|g|_∞` seen.
fn probe_norm(res: &Resolvent, n: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut best: f64 = 0.0;
    for _ in 0..8 {
        let mut v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU))
            .collect();
        for _ in 0..6 {
            let g = res.solve(&v)?;
            best = g.iter().map(|z| z.norm()).fold(best, f64::max);
            v = g
                .iter()
                .map(|z| if z.norm() > 0.0 { z / z.norm() } else { ONE })
                .collect();
        }
    }
    Ok(best)
}

/// Randomized lower bounds for `|(I - R̂₀(ib))^{-1}|_∞` at each `b ≥ 1`.
pub fn resolvent_norm_probe(system: &InducedSystem, b_list: &[f64], seed: u64) -> Result<ProbeTable> {
    if let Some(&b) = b_list.iter().find(|&&b| !(b >= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "probe frequencies must be >= 1, got {b}"
        )));
    }
    let s: Vec<Complex64> = b_list.iter().map(|&b| Complex64::new(0.0, b)).collect();
    let mats = assemble_twisted_batch(system, &s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = system.n_y();
    let mut rows = Vec::with_capacity(b_list.len());
    for (&b, m) in b_list.iter().zip(&mats) {
        let singular = |pivot: f64| {
            log::warn!("resolvent singular at b = {b} (pivot {pivot:.3e})");
            ProbeRow {
                b,
                norm: f64::INFINITY,
                min_pivot: pivot,
                near_singular: true,
            }
        };
        let row = match Resolvent::new(m) {
            Ok(res) => match probe_norm(&res, n, &mut rng) {
                Ok(norm) => {
                    let near = res.min_pivot() < PIVOT_WARN;
                    if near {
                        log::warn!("resolvent nearly singular at b = {b} (pivot {:.3e})", res.min_pivot());
                    }
                    ProbeRow {
                        b,
                        norm,
                        min_pivot: res.min_pivot(),
                        near_singular: near,
                    }
                }
                // the solve loses all accuracy: singular for practical purposes
                Err(Error::Convergence { .. }) => singular(res.min_pivot()),
                Err(e) => return Err(e),
            },
            Err(Error::NearSingular { pivot, .. }) => singular(pivot),
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let regular: Vec<&ProbeRow> = rows.iter().filter(|r| !r.near_singular).collect();
    let exponent = if regular.len() >= 3 {
        let b: Vec<f64> = regular.iter().map(|r| r.b).collect();
        let y: Vec<f64> = regular.iter().map(|r| r.norm).collect();
        fit_loglog(&b, &y, None).ok()
    } else {
        None
    };
    Ok(ProbeTable { rows, exponent })
}
