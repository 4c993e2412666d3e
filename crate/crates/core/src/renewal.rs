//! Renewal algebra on `Ỹ = Y × [0, 1]`: the operator `Û(s)`, fiberwise
//! resolvents, the transformed correlation `ρ̂(s)` and the finite-measure
//! splitting of `T̂₀(s)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::function_space::{gauss_legendre, Domain, GridFunction, GridU, GridY, Observable};
use crate::induced::{InducedSystem, Regime};
use crate::transfer::{assemble, assemble_twisted, assemble_twisted_batch, OperatorMatrix, Resolvent, RoofWeight};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Smallest `|s|` at which `ρ̂` is evaluated.
pub const MIN_FREQUENCY: f64 = 1e-4;
/// Default truncation level `k` of `φ* = φ ∧ k`.
pub const DEFAULT_TRUNCATION: f64 = 25.0;
/// Highest derivative order accepted by [`rho_hat_shifted`].
pub const MAX_SHIFT: usize = 6;
/// Assembly batch size for frequency panels.
const BATCH: usize = 8;

/// The induced system together with the fiber grid and measure conventions.
#[derive(Debug, Clone)]
pub struct RenewalContext<'a> {
    system: &'a InducedSystem,
    gu: GridU,
    regime: Regime,
    normalization: f64,
}

impl<'a> RenewalContext<'a> {
    /// `n_u` is the (even) number of fiber intervals.
    pub fn new(system: &'a InducedSystem, n_u: usize) -> Result<Self> {
        let gu = GridU::new(n_u)?;
        let regime = system.regime();
        let normalization = match regime {
            Regime::Finite => {
                1.0 / system
                    .phi_bar()
                    .ok_or_else(|| Error::Regime("finite regime without a mean roof".into()))?
            }
            _ => 1.0,
        };
        if system.roof().induced_min() < 2.0 {
            // the closed form of Û assumes excursions longer than two fibers
            return Err(Error::Domain(format!(
                "roof minimum {} is below 2; rescale the roof",
                system.roof().induced_min()
            )));
        }
        Ok(Self {
            system,
            gu,
            regime,
            normalization,
        })
    }

    pub fn system(&self) -> &'a InducedSystem {
        self.system
    }

    pub fn grid_y(&self) -> &GridY {
        self.system.grid()
    }

    pub fn grid_u(&self) -> &GridU {
        &self.gu
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// `1/φ̄` in the finite regime, 1 otherwise.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn sample(&self, obs: &Observable) -> GridFunction {
        obs.sample(self.grid_y(), &self.gu)
    }

    /// `∫_Ỹ g dμ̃`.
    pub fn integrate(&self, g: &GridFunction) -> Result<Complex64> {
        self.check_tilde(g)?;
        Ok(self.pair_slices(g.values(), None))
    }

    /// `∫_Ỹ g dμ^φ`.
    pub fn mean(&self, g: &GridFunction) -> Result<Complex64> {
        Ok(self.integrate(g)? * self.normalization)
    }

    /// `∫_Ỹ g dμ^φ` with the fiber rule of `Û`, so that `mean_residue(v)·mean(w)`
    /// is exactly the residue of the discrete `ρ̂_{v,w}` at `s = 0`.
    pub fn mean_residue(&self, g: &GridFunction) -> Result<Complex64> {
        self.check_tilde(g)?;
        let ell = self.mu_weights();
        let n_y = self.system.n_y();
        let mut fibers = Vec::with_capacity(g.len());
        for k in 0..self.gu.len() {
            let c: Complex64 = g.values()[k * n_y..(k + 1) * n_y]
                .iter()
                .zip(&ell)
                .map(|(z, l)| z * *l)
                .sum();
            fibers.extend(std::iter::repeat_n(c, n_y));
        }
        let flat = GridFunction::on_tilde(n_y, self.gu.len(), fibers)?;
        // Û(0) maps u ↦ c(u) to the constant ∫_0^1 c
        let total = u_hat(self, Complex64::new(0.0, 0.0), &flat)?.values()[0];
        Ok(total * self.normalization)
    }

    /// `∫_Ỹ |g| dμ̃`.
    pub fn l1_norm(&self, g: &GridFunction) -> Result<f64> {
        self.check_tilde(g)?;
        let ell = self.mu_weights();
        let n_y = self.system.n_y();
        Ok(self
            .gu
            .weights()
            .iter()
            .enumerate()
            .map(|(k, wu)| {
                let fiber = &g.values()[k * n_y..(k + 1) * n_y];
                wu * fiber.iter().zip(&ell).map(|(z, l)| z.norm() * l).sum::<f64>()
            })
            .sum())
    }

    /// `∫_Ỹ a·b dμ̃` for fiber-major value slices (`b = 1` when absent).
    fn pair_slices(&self, a: &[Complex64], b: Option<&[Complex64]>) -> Complex64 {
        let ell = self.mu_weights();
        let n_y = self.system.n_y();
        let mut acc = ZERO;
        for (k, wu) in self.gu.weights().iter().enumerate() {
            let fa = &a[k * n_y..(k + 1) * n_y];
            let inner: Complex64 = match b {
                Some(b) => {
                    let fb = &b[k * n_y..(k + 1) * n_y];
                    fa.iter().zip(fb).zip(&ell).map(|((x, y), l)| x * y * *l).sum()
                }
                None => fa.iter().zip(&ell).map(|(x, l)| x * *l).sum(),
            };
            acc += inner * *wu;
        }
        acc
    }

    fn mu_weights(&self) -> Vec<f64> {
        self.grid_y()
            .quad_weights()
            .iter()
            .zip(self.system.density())
            .map(|(c, h)| c * h)
            .collect()
    }

    fn check_tilde(&self, g: &GridFunction) -> Result<()> {
        g.require(Domain::Tilde)?;
        if g.n_y() != self.system.n_y() || g.n_u() != self.gu.len() {
            return Err(Error::InvalidArgument(format!(
                "grid function is {}×{}, context is {}×{}",
                g.n_y(),
                g.n_u(),
                self.system.n_y(),
                self.gu.len()
            )));
        }
        Ok(())
    }

    fn to_matrix(&self, g: &GridFunction) -> DMatrix<Complex64> {
        DMatrix::from_column_slice(self.system.n_y(), self.gu.len(), g.values())
    }

    fn grid_function(&self, m: &DMatrix<Complex64>) -> GridFunction {
        GridFunction::on_tilde(self.system.n_y(), self.gu.len(), m.as_slice().to_vec())
            .expect("shape matches the context grids")
    }
}

/// Per-interval weights of `∫_{u_k}^{u_{k+1}} e^{∓s(·)} g(τ) dτ` on the local cubic.
struct FiberKernel {
    /// `e^{-sh}`
    decay: Complex64,
    /// `e^{sh}`
    growth: Complex64,
    /// `∫ e^{-s(u_{k+1}-τ)} g`: stencil and weights for interval `k`.
    forward: Vec<([usize; 4], [Complex64; 4])>,
    /// `∫ e^{s(τ-u_k)} g`.
    backward: Vec<([usize; 4], [Complex64; 4])>,
}

impl FiberKernel {
    fn new(gu: &GridU, s: Complex64) -> Self {
        let h = gu.step();
        let (x, w) = gauss_legendre(8);
        let nodes = gu.nodes();
        let mut forward = Vec::with_capacity(gu.intervals());
        let mut backward = Vec::with_capacity(gu.intervals());
        for k in 0..gu.intervals() {
            let (a, b) = (nodes[k], nodes[k + 1]);
            let mid = gu.cubic_stencil(0.5 * (a + b));
            let mut fw = [ZERO; 4];
            let mut bw = [ZERO; 4];
            for (xq, wq) in x.iter().zip(&w) {
                let tau = a + 0.5 * h * (xq + 1.0);
                let (idx, c) = gu.cubic_weights(tau);
                debug_assert_eq!(idx, mid);
                let ef = (-s * (b - tau)).exp() * (0.5 * h * wq);
                let eb = (s * (tau - a)).exp() * (0.5 * h * wq);
                for q in 0..4 {
                    fw[q] += ef * c[q];
                    bw[q] += eb * c[q];
                }
            }
            forward.push((mid, fw));
            backward.push((mid, bw));
        }
        Self {
            decay: (-s * h).exp(),
            growth: (s * h).exp(),
            forward,
            backward,
        }
    }

    /// Columns `P(u_k)` and `Q(u_k)` of `∫_0^u e^{-s(u-τ)}g` and `∫_u^1 e^{s(τ-u)}g`.
    fn apply(&self, g: &DMatrix<Complex64>) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        let (n_y, n_u) = g.shape();
        let mut p = DMatrix::zeros(n_y, n_u);
        let mut q = DMatrix::zeros(n_y, n_u);
        for k in 0..n_u - 1 {
            let (idx, c) = &self.forward[k];
            for i in 0..n_y {
                let inc: Complex64 = (0..4).map(|a| c[a] * g[(i, idx[a])]).sum();
                p[(i, k + 1)] = p[(i, k)] * self.decay + inc;
            }
        }
        for k in (0..n_u - 1).rev() {
            let (idx, c) = &self.backward[k];
            for i in 0..n_y {
                let inc: Complex64 = (0..4).map(|a| c[a] * g[(i, idx[a])]).sum();
                q[(i, k)] = q[(i, k + 1)] * self.growth + inc;
            }
        }
        (p, q)
    }
}

fn check_frequency(s: Complex64) -> Result<()> {
    if !(s.re >= 0.0) {
        return Err(Error::LeftHalfPlane(s.re));
    }
    Ok(())
}

/// `Û(s)g = P + R̂₀(s)Q` fiberwise, with `matrix = R̂₀(s)`.
fn u_hat_matrix(ctx: &RenewalContext, matrix: &OperatorMatrix, g: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let kernel = FiberKernel::new(&ctx.gu, matrix.s());
    let (p, q) = kernel.apply(g);
    p + matrix.entries() * q
}

/// `(Û(s)v)(y, u) = ∫_0^u e^{-s(u-τ)} v(y, τ) dτ + e^{-su} R̂₀(s)[∫_u^1 e^{sτ} v(·, τ) dτ](y)`.
pub fn u_hat(ctx: &RenewalContext, s: Complex64, v: &GridFunction) -> Result<GridFunction> {
    check_frequency(s)?;
    ctx.check_tilde(v)?;
    let matrix = assemble_twisted(ctx.system, s)?;
    Ok(ctx.grid_function(&u_hat_matrix(ctx, &matrix, &ctx.to_matrix(v))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormCheckRow {
    pub b: f64,
    /// Largest `|Û(ib)v|_{L¹(μ̃)}` over the probes with `|v|_∞ = 1`.
    pub value: f64,
}

/// `sup_v |Û(ib)v|_1` over 20 smooth unimodular probes `v = e^{i(a y + c u + θ)}`
/// (the first probe is `v ≡ 1`).
pub fn u_hat_norm_check(ctx: &RenewalContext, b_list: &[f64], seed: u64) -> Result<Vec<NormCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<GridFunction> = (0..20)
        .map(|j| {
            let (a, c, th) = if j == 0 {
                (0.0, 0.0, 0.0)
            } else {
                (
                    rng.gen_range(-12.0..12.0),
                    rng.gen_range(-12.0..12.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            };
            GridFunction::sample_tilde(ctx.grid_y(), &ctx.gu, |y, u| {
                Complex64::from_polar(1.0, a * y + c * u + th)
            })
        })
        .collect();
    let s: Vec<Complex64> = b_list.iter().map(|&b| Complex64::new(0.0, b)).collect();
    let mut rows = Vec::with_capacity(b_list.len());
    for chunk in s.chunks(BATCH) {
        for m in assemble_twisted_batch(ctx.system, chunk)? {
            let mut value: f64 = 0.0;
            for v in &probes {
                let out = ctx.grid_function(&u_hat_matrix(ctx, &m, &ctx.to_matrix(v)));
                value = value.max(ctx.l1_norm(&out)?);
            }
            rows.push(NormCheckRow { b: m.s().im, value });
        }
    }
    Ok(rows)
}

/// One sample of `ρ̂`, with the optional four-way split of the finite regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoHatSample {
    pub s: Complex64,
    pub value: Complex64,
    pub pieces: Option<[Complex64; 4]>,
}

fn check_away_from_pole(s: Complex64) -> Result<()> {
    check_frequency(s)?;
    if s.norm() < MIN_FREQUENCY * (1.0 - 1e-12) {
        return Err(Error::NearSingular {
            re: s.re,
            im: s.im,
            pivot: s.norm(),
        });
    }
    Ok(())
}

/// `normalization · ∫_Ỹ Û(s)g · w dμ̃`.
fn pair_u_hat(ctx: &RenewalContext, matrix: &OperatorMatrix, g: &DMatrix<Complex64>, w: &GridFunction) -> Complex64 {
    let ug = u_hat_matrix(ctx, matrix, g);
    ctx.pair_slices(ug.as_slice(), Some(w.values())) * ctx.normalization
}

fn rho_hat_with(
    ctx: &RenewalContext,
    matrix: &OperatorMatrix,
    v: &GridFunction,
    w: &GridFunction,
) -> Result<Complex64> {
    let res = Resolvent::new(matrix)?;
    let g = res.solve_columns(&ctx.to_matrix(v))?;
    Ok(pair_u_hat(ctx, matrix, &g, w))
}

/// `ρ̂(s) = normalization · ∫_Ỹ Û(s)(I - R̂(s))^{-1}v · w dμ̃`.
pub fn rho_hat(ctx: &RenewalContext, s: Complex64, v: &GridFunction, w: &GridFunction) -> Result<RhoHatSample> {
    check_away_from_pole(s)?;
    ctx.check_tilde(v)?;
    ctx.check_tilde(w)?;
    let matrix = assemble_twisted(ctx.system, s)?;
    Ok(RhoHatSample {
        s,
        value: rho_hat_with(ctx, &matrix, v, w)?,
        pieces: None,
    })
}

/// [`rho_hat`] over a frequency panel, sharing cylinder passes between frequencies.
pub fn rho_hat_batch(
    ctx: &RenewalContext,
    s: &[Complex64],
    v: &GridFunction,
    w: &GridFunction,
) -> Result<Vec<RhoHatSample>> {
    ctx.check_tilde(v)?;
    ctx.check_tilde(w)?;
    for &z in s {
        check_away_from_pole(z)?;
    }
    let mut out = Vec::with_capacity(s.len());
    for chunk in s.chunks(BATCH) {
        for m in assemble_twisted_batch(ctx.system, chunk)? {
            out.push(RhoHatSample {
                s: m.s(),
                value: rho_hat_with(ctx, &m, v, w)?,
                pieces: None,
            });
        }
    }
    Ok(out)
}

/// `ρ_{v,w}(0) = ∫ v w dμ^φ` by quadrature.
pub fn rho_at_zero(ctx: &RenewalContext, v: &GridFunction, w: &GridFunction) -> Result<Complex64> {
    ctx.check_tilde(v)?;
    ctx.check_tilde(w)?;
    Ok(ctx.pair_slices(v.values(), Some(w.values())) * ctx.normalization)
}

/// `Σ_{j=1}^m ρ_{v,∂^{j-1}w}(0) s^{-j} + s^{-m} ρ̂_{v,∂^m w}(s)`.
pub fn rho_hat_shifted(
    ctx: &RenewalContext,
    s: Complex64,
    v: &Observable,
    w: &Observable,
    m: usize,
) -> Result<Complex64> {
    let vs = ctx.sample(v);
    shifted_terms(ctx, s, &vs, w, m).map(|(boundary, remainder)| boundary + remainder)
}

/// `(Σ boundary terms, s^{-m} ρ̂_{v,∂^m w}(s))`.
pub fn shifted_terms(
    ctx: &RenewalContext,
    s: Complex64,
    v: &GridFunction,
    w: &Observable,
    m: usize,
) -> Result<(Complex64, Complex64)> {
    if m > MAX_SHIFT {
        return Err(Error::InvalidArgument(format!("shift order {m} exceeds {MAX_SHIFT}")));
    }
    let mut boundary = ZERO;
    let mut inv = ONE;
    for j in 1..=m {
        inv /= s;
        let wj = ctx.sample(&w.derivative(j - 1));
        boundary += rho_at_zero(ctx, v, &wj)? * inv;
    }
    let wm = ctx.sample(&w.derivative(m));
    let remainder = rho_hat(ctx, s, v, &wm)?.value * s.powu(m as u32).inv();
    Ok((boundary, remainder))
}

/// Shifted `ρ̂` over a frequency panel: returns `s^{-m} ρ̂_{v,∂^m w}(s)` for each `s`
/// together with the boundary coefficients `ρ_{v,∂^{j-1}w}(0)`, `j = 1..m`.
pub fn shifted_panel(
    ctx: &RenewalContext,
    s: &[Complex64],
    v: &GridFunction,
    w: &Observable,
    m: usize,
) -> Result<(Vec<Complex64>, Vec<RhoHatSample>)> {
    if m > MAX_SHIFT {
        return Err(Error::InvalidArgument(format!("shift order {m} exceeds {MAX_SHIFT}")));
    }
    let coeffs = (1..=m)
        .map(|j| rho_at_zero(ctx, v, &ctx.sample(&w.derivative(j - 1))))
        .collect::<Result<Vec<_>>>()?;
    let wm = ctx.sample(&w.derivative(m));
    let mut samples = rho_hat_batch(ctx, s, v, &wm)?;
    for smp in &mut samples {
        smp.value /= smp.s.powu(m as u32);
    }
    Ok((coeffs, samples))
}

/// CSV `s_re,s_im,rho_re,rho_im,piece1_re,...,piece4_im` (pieces empty when absent).
pub fn write_rho_hat_csv<W: Write>(samples: &[RhoHatSample], mut out: W) -> Result<()> {
    writeln!(
        out,
        "s_re,s_im,rho_re,rho_im,p1_re,p1_im,p2_re,p2_im,p3_re,p3_im,p4_re,p4_im"
    )?;
    for smp in samples {
        write!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            smp.s.re, smp.s.im, smp.value.re, smp.value.im
        )?;
        match smp.pieces {
            Some(p) => {
                for z in p {
                    write!(out, ",{:.17e},{:.17e}", z.re, z.im)?;
                }
            }
            None => write!(out, ",,,,,,,,")?,
        }
        writeln!(out)?;
    }
    Ok(())
}

/// The operators of the finite-measure splitting at one `(s, k)`.
pub struct Splitting {
    s: Complex64,
    k: f64,
    ell: Vec<f64>,
    phi_bar: f64,
    phi_bar_star: f64,
    resolvent: Resolvent,
    resolvent_star: Resolvent,
    c_s: OperatorMatrix,
    c_0: OperatorMatrix,
    /// `ℓ D̂(s) / φ̄` as a row.
    d_row: Vec<Complex64>,
    /// `ℓ(D̂(s)1)/φ̄`.
    d_one: Complex64,
    contraction: f64,
    twisted: OperatorMatrix,
}

impl Splitting {
    pub fn new(system: &InducedSystem, s: Complex64, k: f64) -> Result<Self> {
        if system.regime() != Regime::Finite {
            return Err(Error::Regime("the T̂₀ splitting needs β > 1".into()));
        }
        if !(s.re > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "the splitting is evaluated for Re s > 0, got {s}"
            )));
        }
        let phi_bar = system.phi_bar().ok_or_else(|| Error::Regime("no mean roof".into()))?;
        let mut mats = assemble(
            system,
            &[
                RoofWeight::Twist { s },
                RoofWeight::TruncatedTwist { s, k },
                RoofWeight::TwistGap { s, k },
                RoofWeight::Excess { k },
            ],
        )?;
        let c_0 = mats.pop().expect("four weights");
        let c_s = mats.pop().expect("four weights");
        let star = mats.pop().expect("four weights");
        let twisted = mats.pop().expect("four weights");
        let ell = twisted.mu_weights().to_vec();
        let n = ell.len();
        let ell_c = |m: &OperatorMatrix| -> Vec<Complex64> {
            (0..n)
                .map(|j| (0..n).map(|i| m.entries()[(i, j)] * ell[i]).sum())
                .collect()
        };
        let row_c0 = ell_c(&c_0);
        let row_cs = ell_c(&c_s);
        let c0_one: Complex64 = row_c0.iter().sum();
        let phi_bar_star = phi_bar - c0_one.re;
        let d_row: Vec<Complex64> = row_c0.iter().zip(&row_cs).map(|(a, b)| (a - b) / phi_bar).collect();
        let d_one: Complex64 = d_row.iter().sum();
        let contraction = row_cs.iter().map(|z| z.norm()).sum::<f64>() / phi_bar;
        if !(contraction < 1.0 / 3.0) {
            return Err(Error::TruncationTooSmall(contraction));
        }
        Ok(Self {
            s,
            k,
            ell,
            phi_bar,
            phi_bar_star,
            resolvent: Resolvent::new(&twisted)?,
            resolvent_star: Resolvent::new(&star)?,
            c_s,
            c_0,
            d_row,
            d_one,
            contraction,
            twisted,
        })
    }

    pub fn s(&self) -> Complex64 {
        self.s
    }

    pub fn truncation(&self) -> f64 {
        self.k
    }

    /// `Σ_j |(ℓĈ(s))_j| / φ̄`, the norm of `P_φĈ(s)` on the grid.
    pub fn contraction(&self) -> f64 {
        self.contraction
    }

    pub fn phi_bar_star(&self) -> f64 {
        self.phi_bar_star
    }

    /// `∫ Ĉ(0)1 dμ`.
    pub fn c0_integral(&self) -> f64 {
        self.phi_bar - self.phi_bar_star
    }

    /// `∫ D̂(s)1 dμ`.
    pub fn d_integral(&self) -> Complex64 {
        self.d_one * self.phi_bar
    }

    pub fn twisted(&self) -> &OperatorMatrix {
        &self.twisted
    }

    fn ell(&self, v: &[Complex64]) -> Complex64 {
        v.iter().zip(&self.ell).map(|(z, l)| z * *l).sum()
    }

    /// `(I - P_φD̂)^{-1} x` by Sherman-Morrison.
    fn inv_rank_one(&self, x: &[Complex64]) -> Vec<Complex64> {
        let r: Complex64 = self.d_row.iter().zip(x).map(|(a, b)| a * b).sum();
        let shift = r / (ONE - self.d_one);
        x.iter().map(|z| z + shift).collect()
    }

    /// `T̂₀(s)v`.
    pub fn whole(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        self.resolvent.solve(v)
    }

    /// The four pieces `T̂_{0,j}(s)v`.
    pub fn pieces(&self, v: &[Complex64]) -> Result<[Vec<Complex64>; 4]> {
        let n = v.len();
        let s = self.s;
        let lv = self.ell(v) / self.phi_bar;
        let d = self.d_one;
        let p1 = vec![lv / s; n];
        let p2 = vec![lv * d / s; n];
        let p3 = vec![lv * d * d / (s * (ONE - d)); n];
        // (I - P_φD̂)^{-1}(I - P_φĈ(0))Ĥ*(I - ĈB̂)v with B̂ = sT̂₀
        let t0v = self.resolvent.solve(v)?;
        let cb = self.c_s.apply(&t0v);
        let w2: Vec<Complex64> = v.iter().zip(&cb).map(|(a, b)| a - b * s).collect();
        let star = self.resolvent_star.solve(&w2)?;
        let pole = self.ell(&w2) / (self.phi_bar_star * s);
        let w3: Vec<Complex64> = star.iter().map(|z| z - pole).collect();
        let c0w3 = self.c_0.apply(&w3);
        let corr = self.ell(&c0w3) / self.phi_bar;
        let w4: Vec<Complex64> = w3.iter().map(|z| z - corr).collect();
        let p4 = self.inv_rank_one(&w4);
        Ok([p1, p2, p3, p4])
    }
}

/// `∫_Y D̂(s)1 dμ` with `D̂(s) = Ĉ(0) - Ĉ(s)`, for `Re s >= 0`, `s != 0`.
pub fn gap_integral(system: &InducedSystem, s: Complex64, k: f64) -> Result<Complex64> {
    if system.regime() != Regime::Finite {
        return Err(Error::Regime("D̂ needs β > 1".into()));
    }
    let mats = assemble(system, &[RoofWeight::TwistGap { s, k }, RoofWeight::Excess { k }])?;
    let one = vec![ONE; system.n_y()];
    Ok(mats[1].mu_integral(&mats[1].apply(&one)) - mats[0].mu_integral(&mats[0].apply(&one)))
}

/// `T̂₀(s)v₀` split into its four pieces, with the whole for comparison.
#[derive(Debug, Clone)]
pub struct T0Decomposition {
    pub pieces: [GridFunction; 4],
    pub whole: GridFunction,
    pub contraction: f64,
    /// `∫ Ĉ(0)1 dμ = φ̄ - φ̄*`.
    pub c0_integral: f64,
    /// `∫ D̂(s)1 dμ`.
    pub d_integral: Complex64,
}

impl T0Decomposition {
    /// `|Σ pieces - whole|_∞ / |whole|_∞`.
    pub fn relative_residual(&self) -> f64 {
        let n = self.whole.len();
        let mut err: f64 = 0.0;
        for i in 0..n {
            let sum: Complex64 = self.pieces.iter().map(|p| p.values()[i]).sum();
            err = err.max((sum - self.whole.values()[i]).norm());
        }
        err / self.whole.sup_norm()
    }
}

pub fn decompose_t0(ctx: &RenewalContext, s: Complex64, k: f64, v0: &GridFunction) -> Result<T0Decomposition> {
    v0.require(Domain::Y)?;
    if v0.len() != ctx.system.n_y() {
        return Err(Error::InvalidArgument("v₀ does not match GridY".into()));
    }
    let split = Splitting::new(ctx.system, s, k)?;
    let pieces = split.pieces(v0.values())?.map(GridFunction::on_y);
    Ok(T0Decomposition {
        pieces,
        whole: GridFunction::on_y(split.whole(v0.values())?),
        contraction: split.contraction(),
        c0_integral: split.c0_integral(),
        d_integral: split.d_integral(),
    })
}

/// `ρ̂(s)` with its four-way split `ρ̂₁..ρ̂₄` (finite regime, `Re s > 0`).
pub fn rho_hat_split(
    ctx: &RenewalContext,
    s: Complex64,
    k: f64,
    v: &GridFunction,
    w: &GridFunction,
) -> Result<RhoHatSample> {
    ctx.check_tilde(v)?;
    ctx.check_tilde(w)?;
    let split = Splitting::new(ctx.system, s, k)?;
    let n_y = ctx.system.n_y();
    let n_u = ctx.gu.len();
    let mut cols: [DMatrix<Complex64>; 4] = std::array::from_fn(|_| DMatrix::zeros(n_y, n_u));
    let mut whole = DMatrix::zeros(n_y, n_u);
    for k in 0..n_u {
        let fiber = &v.values()[k * n_y..(k + 1) * n_y];
        for (c, p) in cols.iter_mut().zip(split.pieces(fiber)?) {
            c.column_mut(k).copy_from_slice(&p);
        }
        whole.column_mut(k).copy_from_slice(&split.whole(fiber)?);
    }
    let pieces = cols.map(|g| pair_u_hat(ctx, split.twisted(), &g, w));
    Ok(RhoHatSample {
        s,
        value: pair_u_hat(ctx, split.twisted(), &whole, w),
        pieces: Some(pieces),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::YProfile;
    use crate::induced::InducedParams;
    use crate::interval_maps::{LsvMap, RoofKind, RoofPreset};

    fn small(alpha: f64) -> InducedSystem {
        let params = InducedParams {
            n_max: 400,
            n_y: 48,
            deep_len: 1 << 14,
            ..InducedParams::default()
        };
        InducedSystem::build(
            LsvMap::new(alpha).unwrap(),
            RoofPreset::floored(RoofKind::OnePlusX),
            params,
        )
        .unwrap()
    }

    #[test]
    fn u_hat_zero_fixes_one() {
        let sys = small(1.5);
        let ctx = RenewalContext::new(&sys, 32).unwrap();
        let one = GridFunction::sample_tilde(ctx.grid_y(), ctx.grid_u(), |_, _| ONE);
        let out = u_hat(&ctx, ZERO, &one).unwrap();
        for z in out.values() {
            assert!((z - ONE).norm() < 1e-8, "{z}");
        }
    }

    #[test]
    fn pole_rejected() {
        let sys = small(1.5);
        let ctx = RenewalContext::new(&sys, 16).unwrap();
        let v = ctx.sample(&Observable::new(YProfile::One));
        assert!(rho_hat(&ctx, ZERO, &v, &v).is_err());
        assert!(rho_hat(&ctx, Complex64::new(-0.1, 1.0), &v, &v).is_err());
    }

    #[test]
    fn conjugate_symmetry() {
        let sys = small(0.67);
        let ctx = RenewalContext::new(&sys, 32).unwrap();
        let v = ctx.sample(&Observable::new(YProfile::Cos));
        let w = ctx.sample(&Observable::new(YProfile::Linear));
        let s = Complex64::new(0.3, 1.7);
        let a = rho_hat(&ctx, s, &v, &w).unwrap().value;
        let b = rho_hat(&ctx, s.conj(), &v, &w).unwrap().value;
        assert!((a.conj() - b).norm() <= 1e-10 * a.norm().max(1.0));
    }

    #[test]
    fn split_sums_to_whole() {
        let sys = small(0.67);
        let ctx = RenewalContext::new(&sys, 16).unwrap();
        let v0 = GridFunction::sample_y(ctx.grid_y(), |y| Complex64::new(1.0 + y * y, 0.0));
        let d = decompose_t0(&ctx, Complex64::new(0.4, 1.1), DEFAULT_TRUNCATION, &v0).unwrap();
        assert!(d.relative_residual() < 1e-8, "{}", d.relative_residual());
    }

    #[test]
    fn split_rejects_small_k() {
        let sys = small(0.67);
        let ctx = RenewalContext::new(&sys, 16).unwrap();
        let v0 = GridFunction::sample_y(ctx.grid_y(), |_| ONE);
        let r = decompose_t0(&ctx, Complex64::new(0.01, 0.01), 2.0, &v0);
        assert!(
            matches!(r, Err(Error::TruncationTooSmall(_))),
            "{:?}",
            r.map(|d| d.contraction)
        );
    }

    #[test]
    fn shifted_order_zero_is_plain() {
        let sys = small(0.67);
        let ctx = RenewalContext::new(&sys, 32).unwrap();
        let v = Observable::new(YProfile::Cos);
        let w = Observable::new(YProfile::One);
        let s = Complex64::new(1.0, 4.0);
        let a = rho_hat_shifted(&ctx, s, &v, &w, 0).unwrap();
        let b = rho_hat(&ctx, s, &ctx.sample(&v), &ctx.sample(&w)).unwrap().value;
        assert_eq!(a, b);
        assert!(rho_hat_shifted(&ctx, s, &v, &w, 7).is_err());
    }
}
