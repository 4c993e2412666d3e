//! Monte Carlo estimates of `ρ(t)` and `ρ̂(s)` by flowing `μ̃`-distributed
//! points through the suspension.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::sync::Mutex;

use crate::curve::{CorrelationCurve, CurvePoint, Source};
use crate::error::{Error, Result};
use crate::function_space::{bump, gauss_legendre, integrate_y, GridFunction, Observable};
use crate::induced::{InducedSystem, Regime};

/// Samples per deterministic block; blocks are reduced in index order.
const BLOCK: usize = 4096;
/// Cells of the sampling CDF.
const CDF_CELLS: usize = 8192;
/// Nodes of the cumulative bump-Laplace table.
const BUMP_CELLS: usize = 2048;
pub const MIN_SAMPLES: usize = 10_000;

static SEEDS: Mutex<Option<HashSet<u64>>> = Mutex::new(None);

fn register_seed(seed: u64) {
    let mut guard = SEEDS.lock().unwrap_or_else(|e| e.into_inner());
    let set = guard.get_or_insert_with(HashSet::new);
    if !set.insert(seed) {
        log::warn!("seed {seed:#x} reused; replicas with this seed are not independent");
    }
}

/// Inverse-CDF sampler of `μ` on `Y` from the density on a uniform cell grid.
#[derive(Debug, Clone)]
pub struct SamplerMu {
    edges: Vec<f64>,
    cdf: Vec<f64>,
    seed: u64,
}

impl SamplerMu {
    pub fn new(system: &InducedSystem, seed: u64) -> Result<Self> {
        let grid = system.grid();
        let h = system.density();
        let width = 0.5 / CDF_CELLS as f64;
        let edges: Vec<f64> = (0..=CDF_CELLS).map(|k| 0.5 + width * k as f64).collect();
        let (x, w) = gauss_legendre(4);
        let mut cdf = Vec::with_capacity(CDF_CELLS + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for k in 0..CDF_CELLS {
            let mass: f64 = x
                .iter()
                .zip(&w)
                .map(|(xq, wq)| 0.5 * width * wq * grid.interp_real(h, edges[k] + 0.5 * width * (xq + 1.0)))
                .sum();
            if !(mass > 0.0) {
                return Err(Error::Sampling(format!(
                    "density is not positive near y = {}",
                    edges[k]
                )));
            }
            acc += mass;
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Ok(Self { edges, cdf, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `y` with `μ(y' < y) = q`, piecewise linear within cells.
    pub fn quantile(&self, q: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c <= q).clamp(1, CDF_CELLS) - 1;
        let frac = (q - self.cdf[k]) / (self.cdf[k + 1] - self.cdf[k]);
        self.edges[k] + frac.clamp(0.0, 1.0) * (self.edges[k + 1] - self.edges[k])
    }

    /// Independent stream for sample `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// `(y, u) ~ μ × Unif[0, 1]` from a stream.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let y = self.quantile(rng.gen::<f64>());
        (y, rng.gen::<f64>())
    }

    /// Mean of `g` over `n` samples against its `μ`-integral; error if they differ by more than four standard errors.
    pub fn smoke_test(&self, system: &InducedSystem, g: impl Fn(f64) -> f64, n: usize) -> Result<(f64, f64)> {
        let mut rng = self.stream(u64::MAX);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = g(self.quantile(rng.gen::<f64>()));
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        let sampled = GridFunction::sample_y(system.grid(), |y| Complex64::new(g(y), 0.0));
        let exact = integrate_y(system.grid(), &sampled, Some(system.density()))?.re;
        if (mean - exact).abs() > 4.0 * se.max(1e-12) {
            return Err(Error::Sampling(format!(
                "sampler mean {mean} vs μ-integral {exact} (se {se:e})"
            )));
        }
        Ok((mean, se))
    }
}

/// Position of a flowed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowPoint {
    /// In `Ỹ` at height `u ∈ [0, 1]`.
    Inside { y: f64, u: f64 },
    /// Above `Ỹ`: height in `(1, φ(y))`.
    Outside { y: f64, height: f64 },
}

/// Orbit of a base point under the flow, iterating `f` lazily so that long
/// excursions are only followed as far as the requested time.
struct Orbit<'a> {
    system: &'a InducedSystem,
    /// Base point of the current lap.
    y: f64,
    /// Absolute height at which the current lap starts (`φ_n(y₀)`).
    start: f64,
    /// Current position of `f` inside the excursion and the roof collected so far.
    x: f64,
    acc: f64,
    closed: bool,
}

impl<'a> Orbit<'a> {
    fn new(system: &'a InducedSystem, y: f64) -> Self {
        Self {
            system,
            y,
            start: 0.0,
            x: y,
            acc: 0.0,
            closed: false,
        }
    }

    /// One step of `f`. When the excursion re-enters `Y` the lap is closed:
    /// `acc` is its full roof and `x` the next base point, committed lazily.
    fn step(&mut self) -> Result<()> {
        if self.closed {
            self.start += self.acc;
            self.y = self.x;
            self.acc = 0.0;
            self.closed = false;
        }
        self.acc += self.system.roof().eval(self.x);
        self.x = self.system.map().apply_unchecked(self.x);
        if self.x >= 0.5 {
            self.closed = true;
        } else if self.x <= 0.0 {
            return Err(Error::Domain("orbit fell onto the fixed point".into()));
        }
        Ok(())
    }

    /// Moves to the lap containing absolute height `h`; returns `h - start`.
    fn seek(&mut self, h: f64) -> Result<f64> {
        while h >= self.start + self.acc {
            self.step()?;
        }
        Ok(h - self.start)
    }

    /// Advances to the next lap unless the current one runs past `limit`.
    fn next_lap(&mut self, limit: f64) -> Result<bool> {
        loop {
            if self.closed {
                self.step()?;
                return Ok(true);
            }
            if self.start + self.acc > limit {
                return Ok(false);
            }
            self.step()?;
        }
    }
}

/// `f_t(y, u)`: the lap `n` with `φ_n ≤ u + t < φ_{n+1}` and the residual height.
pub fn flow_forward(system: &InducedSystem, y: f64, u: f64, t: f64) -> Result<FlowPoint> {
    if !(0.5..=1.0).contains(&y) || !(0.0..=1.0).contains(&u) || !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "flow_forward needs y ∈ Y, u ∈ [0, 1], t ≥ 0; got ({y}, {u}, {t})"
        )));
    }
    let mut orbit = Orbit::new(system, y);
    let height = orbit.seek(u + t)?;
    if height <= 1.0 {
        return Ok(FlowPoint::Inside { y: orbit.y, u: height });
    }
    Ok(FlowPoint::Outside { y: orbit.y, height })
}

fn normalization(system: &InducedSystem) -> Result<f64> {
    Ok(match system.regime() {
        Regime::Finite => 1.0 / system.phi_bar().ok_or_else(|| Error::Regime("no mean roof".into()))?,
        _ => 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub t_grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub normalization: f64,
}

impl McEstimate {
    pub fn to_curve(&self) -> CorrelationCurve {
        let points = self
            .t_grid
            .iter()
            .zip(&self.estimates)
            .zip(&self.stderr)
            .map(|((&t, &value), &error)| CurvePoint { t, value, error })
            .collect();
        CorrelationCurve::new(Source::MonteCarlo, points)
    }

    /// CSV `t,rho,stderr,N,seed`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,rho,stderr,N,seed")?;
        for k in 0..self.t_grid.len() {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{},{}",
                self.t_grid[k], self.estimates[k], self.stderr[k], self.samples, self.seed
            )?;
        }
        Ok(())
    }
}

/// Per-block sums `Σx`, `Σx²` of `m` statistics.
#[derive(Debug, Clone)]
struct Moments {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Moments {
    fn new(m: usize) -> Self {
        Self {
            s1: vec![0.0; m],
            s2: vec![0.0; m],
        }
    }

    fn push(&mut self, x: &[f64]) {
        for ((a, b), v) in self.s1.iter_mut().zip(&mut self.s2).zip(x) {
            *a += v;
            *b += v * v;
        }
    }

    fn merge(&mut self, other: &Moments) {
        for k in 0..self.s1.len() {
            self.s1[k] += other.s1[k];
            self.s2[k] += other.s2[k];
        }
    }

    fn finish(&self, n: usize, scale: f64) -> (Vec<f64>, Vec<f64>) {
        let nf = n as f64;
        self.s1
            .iter()
            .zip(&self.s2)
            .map(|(a, b)| {
                let mean = a / nf;
                let var = (b / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
                (scale * mean, scale * (var / nf).sqrt())
            })
            .unzip()
    }
}

/// Runs `per_sample` over `n` samples in fixed blocks, on all available threads.
fn run_blocks(n: usize, m: usize, per_sample: impl Fn(u64, &mut [f64]) -> Result<()> + Sync) -> Result<Moments> {
    let blocks = n.div_ceil(BLOCK);
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(blocks);
    let block = |b: usize| -> Result<Moments> {
        let mut mom = Moments::new(m);
        let mut x = vec![0.0; m];
        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
            per_sample(i as u64, &mut x)?;
            mom.push(&x);
        }
        Ok(mom)
    };
    let results: Vec<Result<Moments>> = if workers <= 1 {
        (0..blocks).map(block).collect()
    } else {
        let mut slots: Vec<Option<Result<Moments>>> = (0..blocks).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunks: Vec<_> = slots.chunks_mut(blocks.div_ceil(workers)).enumerate().collect();
            let per = blocks.div_ceil(workers);
            for (w, chunk) in chunks {
                let block = &block;
                scope.spawn(move || {
                    for (j, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(block(w * per + j));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every block ran")).collect()
    };
    let mut total = Moments::new(m);
    for r in results {
        total.merge(&r?);
    }
    Ok(total)
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    Ok(())
}

/// `ρ_{v,w}(t) ≈ normalization · mean of v(y,u)·w(f_t(y,u))`, one orbit per sample for all `t`.
pub fn mc_correlation(
    system: &InducedSystem,
    v: &Observable,
    w: &Observable,
    t_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_samples(n)?;
    if t_grid.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::InvalidArgument("times must be non-negative".into()));
    }
    register_seed(seed);
    let sampler = SamplerMu::new(system, seed)?;
    let mut order: Vec<usize> = (0..t_grid.len()).collect();
    order.sort_by(|&a, &b| t_grid[a].total_cmp(&t_grid[b]));
    let mom = run_blocks(n, t_grid.len(), |i, x| {
        let mut rng = sampler.stream(i);
        let (y, u) = sampler.draw(&mut rng);
        let vy = v.eval(y, u);
        if vy == 0.0 {
            x.fill(0.0);
            return Ok(());
        }
        let mut orbit = Orbit::new(system, y);
        for &k in &order {
            let height = orbit.seek(u + t_grid[k])?;
            x[k] = if height <= 1.0 {
                vy * w.eval(orbit.y, height)
            } else {
                0.0
            };
        }
        Ok(())
    })?;
    let norm = normalization(system)?;
    let (estimates, stderr) = mom.finish(n, norm);
    Ok(McEstimate {
        t_grid: t_grid.to_vec(),
        estimates,
        stderr,
        samples: n,
        seed,
        normalization: norm,
    })
}

/// `C(h) = ∫_0^h e^{-sτ} χ^{(order)}(τ) dτ` on a uniform table, linear in between.
struct BumpLaplace {
    table: Vec<Complex64>,
}

impl BumpLaplace {
    fn new(s: Complex64, order: usize) -> Self {
        let (x, w) = gauss_legendre(8);
        let h = 1.0 / BUMP_CELLS as f64;
        let mut table = Vec::with_capacity(BUMP_CELLS + 1);
        let mut acc = Complex64::new(0.0, 0.0);
        table.push(acc);
        for k in 0..BUMP_CELLS {
            for (xq, wq) in x.iter().zip(&w) {
                let tau = h * (k as f64 + 0.5 * (xq + 1.0));
                acc += (-s * tau).exp() * bump(tau, order) * (0.5 * h * wq);
            }
            table.push(acc);
        }
        Self { table }
    }

    fn at(&self, h: f64) -> Complex64 {
        let x = h.clamp(0.0, 1.0) * BUMP_CELLS as f64;
        let k = (x.floor() as usize).min(BUMP_CELLS - 1);
        let f = x - k as f64;
        self.table[k] * (1.0 - f) + self.table[k + 1] * f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McLaplace {
    pub s: Vec<Complex64>,
    pub estimates: Vec<Complex64>,
    /// Standard errors of the real and imaginary parts.
    pub stderr: Vec<(f64, f64)>,
    /// `|v|_∞|w|_∞ e^{-Re s·T}/Re s`.
    pub truncation: Vec<f64>,
    pub t_max: f64,
    pub samples: usize,
    pub seed: u64,
}

/// `∫_0^{T} e^{-st} ρ(t) dt` with the time integral done exactly along each orbit.
pub fn mc_laplace(
    system: &InducedSystem,
    v: &Observable,
    w: &Observable,
    s: &[Complex64],
    t_max: f64,
    n: usize,
    seed: u64,
) -> Result<McLaplace> {
    check_samples(n)?;
    if s.iter().any(|z| !(z.re > 0.0)) {
        return Err(Error::InvalidArgument("mc_laplace needs Re s > 0".into()));
    }
    if !(t_max > 0.0) {
        return Err(Error::InvalidArgument("t_max must be positive".into()));
    }
    register_seed(seed);
    let sampler = SamplerMu::new(system, seed)?;
    let tables: Vec<BumpLaplace> = s.iter().map(|&z| BumpLaplace::new(z, w.order)).collect();
    let m = s.len();
    let mom = run_blocks(n, 2 * m, |i, x| {
        x.fill(0.0);
        let mut rng = sampler.stream(i);
        let (y, u) = sampler.draw(&mut rng);
        let vy = v.eval(y, u);
        if vy == 0.0 {
            return Ok(());
        }
        let mut orbit = Orbit::new(system, y);
        let mut acc = vec![Complex64::new(0.0, 0.0); m];
        loop {
            // lap heights h ∈ [lo, hi] ⊂ [0, 1] at times t = h + start - u
            let lo = (u - orbit.start).max(0.0);
            let hi = (t_max + u - orbit.start).min(1.0);
            if lo >= hi {
                break;
            }
            let wy = w.y_part(orbit.y);
            if wy != 0.0 {
                for k in 0..m {
                    let shift = (-s[k] * (orbit.start - u)).exp();
                    acc[k] += shift * (tables[k].at(hi) - tables[k].at(lo)) * wy;
                }
            }
            if !orbit.next_lap(t_max + u)? {
                break;
            }
        }
        for k in 0..m {
            x[2 * k] = vy * acc[k].re;
            x[2 * k + 1] = vy * acc[k].im;
        }
        Ok(())
    })?;
    let norm = normalization(system)?;
    let (mean, se) = mom.finish(n, norm);
    let bound = v.sup_bound() * w.sup_bound();
    Ok(McLaplace {
        s: s.to_vec(),
        estimates: (0..m).map(|k| Complex64::new(mean[2 * k], mean[2 * k + 1])).collect(),
        stderr: (0..m).map(|k| (se[2 * k], se[2 * k + 1])).collect(),
        truncation: s.iter().map(|z| norm * bound * (-z.re * t_max).exp() / z.re).collect(),
        t_max,
        samples: n,
        seed,
    })
}
