//! First-return (induced) system on `Y = [1/2, 1]`: cylinder geometry on the
//! collocation grid, the invariant density, deep-cylinder aggregation, and
//! tail statistics of the return time and the induced roof.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::asymptotics::fit_loglog;
use crate::error::{Error, Result};
use crate::function_space::{gauss_legendre, GridY};
use crate::interval_maps::{IntermittentMap, LsvMap, RoofPreset, XiLadder};

/// Measure regime of the suspension flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `β > 1`: the flow preserves a probability measure.
    Finite,
    /// `β < 1`.
    Infinite,
    /// `β = 1`, infinite measure with a logarithmic normalization.
    Boundary,
}

impl Regime {
    pub fn of_beta(beta: f64) -> Self {
        if (beta - 1.0).abs() < 1e-12 {
            Self::Boundary
        } else if beta > 1.0 {
            Self::Finite
        } else {
            Self::Infinite
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Finite => "finite",
            Self::Infinite => "infinite",
            Self::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InducedParams {
    /// Number of resolved cylinders.
    pub n_max: usize,
    /// Collocation nodes on `Y`.
    pub n_y: usize,
    /// Aggregate cylinders past `n_max` with the asymptotic model.
    pub deep_tail: bool,
    /// Ladder length used by the aggregated tail.
    pub deep_len: usize,
    pub density_tol: f64,
    pub density_max_iter: usize,
}

impl Default for InducedParams {
    fn default() -> Self {
        Self {
            n_max: 4000,
            n_y: 128,
            deep_tail: true,
            deep_len: 1 << 20,
            density_tol: 1e-10,
            density_max_iter: 5000,
        }
    }
}

/// One cylinder `a_n = ((1+ξ_n)/2, (1+ξ_{n-1})/2)` of the return-time partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    pub n: usize,
    pub left: f64,
    pub right: f64,
}

impl Cylinder {
    pub fn contains(&self, y: f64) -> bool {
        y > self.left && y <= self.right
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }
}

/// Empirical distortion constants of the branch weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    /// `sup e^{p(y_a)} / μ(a)` over resolved cylinders and grid nodes.
    pub c1_hat: f64,
    /// `sup |e^{p(y_a)} - e^{p(y'_a)}| / (e^{p(y_a)} |y - y'|)` over neighbouring nodes.
    pub lipschitz_hat: f64,
    /// `sup_a (sup_a φ - inf_a φ) / inf_a φ`.
    pub roof_oscillation: f64,
}

/// Tail constant together with the fitted check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConstant {
    pub analytic: f64,
    pub fitted: f64,
    pub exponent: f64,
    pub window: (f64, f64),
}

impl TailConstant {
    pub fn relative_gap(&self) -> f64 {
        (self.fitted / self.analytic - 1.0).abs()
    }
}

/// Aggregated cylinders `n_max < n`, modelled on the ladder:
/// weight `q_N(y) Leb(a_n)/Leb(a_N)`, roof `φ_N(y) + Δ_n`, position `1/2 + δ_n`.
/// Functions on these cylinders are expanded to second order about `y = 1/2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepTail {
    ratio: Vec<f64>,
    delta: Vec<f64>,
    incr: Vec<f64>,
    rem_mass: f64,
    rem_delta: f64,
    rem_incr: f64,
    last_n: usize,
    phi0: f64,
    beta: f64,
    /// Suffix sums of ratio, ratio·δ, ratio·Δ, ratio·δ·Δ (the last two in the finite regime).
    suf_p0: Vec<f64>,
    suf_q0: Vec<f64>,
    suf_p1: Vec<f64>,
    suf_q1: Vec<f64>,
    /// `Σ ratio·δ²` and (finite regime) `Σ ratio·δ²·Δ`.
    m2: f64,
    p2: f64,
}

impl DeepTail {
    fn build(ladder: &XiLadder, roof: &RoofPreset, n_max: usize, deep_len: usize) -> Self {
        let xi = ladder.as_slice();
        let m = deep_len.min(xi.len() - 1);
        let leb = |n: usize| 0.5 * (xi[n - 1] - xi[n]);
        let leb_n = leb(n_max);
        let count = m.saturating_sub(n_max);
        let mut ratio = Vec::with_capacity(count);
        let mut delta = Vec::with_capacity(count);
        let mut incr = Vec::with_capacity(count);
        let mut acc = 0.0;
        for n in n_max + 1..=m {
            acc += roof.eval(0.5 * (xi[n] + xi[n - 1]));
            ratio.push(leb(n) / leb_n);
            delta.push(0.25 * (xi[n - 1] + xi[n]));
            incr.push(acc);
        }
        let beta = ladder.map().beta();
        let phi0 = roof.at_zero();
        let rem_mass = 0.5 * xi[m] / leb_n;
        let mut tail = Self {
            ratio,
            delta,
            incr,
            rem_mass,
            rem_delta: 0.5 * xi[m],
            rem_incr: acc,
            last_n: m,
            phi0,
            beta,
            suf_p0: Vec::new(),
            suf_q0: Vec::new(),
            suf_p1: Vec::new(),
            suf_q1: Vec::new(),
            m2: 0.0,
            p2: 0.0,
        };
        tail.build_suffix();
        tail
    }

    fn build_suffix(&mut self) {
        let k = self.ratio.len();
        let finite = self.beta > 1.0;
        let mut p0 = vec![0.0; k + 1];
        let mut q0 = vec![0.0; k + 1];
        let mut p1 = vec![0.0; if finite { k + 1 } else { 0 }];
        let mut q1 = vec![0.0; if finite { k + 1 } else { 0 }];
        p0[k] = self.rem_mass;
        q0[k] = self.rem_mass * 0.5 * self.rem_delta;
        if finite {
            p1[k] = self.rem_first_moment();
            q1[k] = p1[k] * 0.5 * self.rem_delta;
        }
        for j in (0..k).rev() {
            p0[j] = p0[j + 1] + self.ratio[j];
            q0[j] = q0[j + 1] + self.ratio[j] * self.delta[j];
            if finite {
                p1[j] = p1[j + 1] + self.ratio[j] * self.incr[j];
                q1[j] = q1[j + 1] + self.ratio[j] * self.delta[j] * self.incr[j];
            }
        }
        // remainder cylinders sit in [1/2, 1/2 + ξ_M/2]
        let rem_d2 = self.rem_delta * self.rem_delta / 3.0;
        self.m2 = self.rem_mass * rem_d2 + self.ratio.iter().zip(&self.delta).map(|(r, d)| r * d * d).sum::<f64>();
        if finite {
            self.p2 = self.rem_first_moment() * rem_d2
                + self
                    .ratio
                    .iter()
                    .zip(&self.delta)
                    .zip(&self.incr)
                    .map(|((r, d), i)| r * d * d * i)
                    .sum::<f64>();
        }
        self.suf_p0 = p0;
        self.suf_q0 = q0;
        self.suf_p1 = p1;
        self.suf_q1 = q1;
    }

    /// `Σ_{n>M} ratio_n Δ_n` for `β > 1`.
    fn rem_first_moment(&self) -> f64 {
        let m = self.last_n as f64;
        self.rem_mass * (self.rem_incr + self.phi0 * m / (self.beta - 1.0))
    }

    /// `Σ ratio_n δ_n^p e^{-sΔ_n}` for `p = 0, 1, 2`, including the closed-form remainder.
    pub fn laplace_sums(&self, s: Complex64) -> [Complex64; 3] {
        if s == Complex64::new(0.0, 0.0) {
            return self.mass_sums().map(|v| Complex64::new(v, 0.0));
        }
        let mut acc = [0.0; 6];
        for ((&r, &d), &inc) in self.ratio.iter().zip(&self.delta).zip(&self.incr) {
            let mag = (-s.re * inc).exp() * r;
            let (sn, cs) = (-s.im * inc).sin_cos();
            let er = mag * cs;
            let ei = mag * sn;
            acc[0] += er;
            acc[1] += ei;
            acc[2] += er * d;
            acc[3] += ei * d;
            acc[4] += er * d * d;
            acc[5] += ei * d * d;
        }
        // The remainder advances the roof by φ_X(0) per step, so it depends on s
        // only through e^{-sφ_X(0)}; use the principal branch of its logarithm.
        let mut theta = s * self.phi0;
        theta.im -= std::f64::consts::TAU * (theta.im / std::f64::consts::TAU).round();
        let z = theta * self.last_n as f64;
        let rem = self.rem_mass * (-s * self.rem_incr).exp() * self.beta / (z + self.beta);
        let d = self.rem_delta;
        [
            Complex64::new(acc[0], acc[1]) + rem,
            Complex64::new(acc[2], acc[3]) + rem * (0.5 * d),
            Complex64::new(acc[4], acc[5]) + rem * (d * d / 3.0),
        ]
    }

    /// First index `p` with `Δ_p > tau` (the deep-cylinder suffix above a roof level).
    fn first_above(&self, tau: f64) -> usize {
        self.incr.partition_point(|&v| v <= tau)
    }

    /// `(Σ_{Δ_n > τ} ratio_n, Σ_{Δ_n > τ} ratio_n δ_n)`.
    fn mass_above(&self, tau: f64) -> (f64, f64) {
        let p = self.first_above(tau);
        if p < self.incr.len() {
            (self.suf_p0[p], self.suf_q0[p])
        } else {
            let frac = self.rem_fraction_above(tau);
            (self.rem_mass * frac, self.rem_mass * frac * 0.5 * self.rem_delta)
        }
    }

    fn rem_fraction_above(&self, tau: f64) -> f64 {
        let m = self.last_n as f64;
        let n_star = m + ((tau - self.rem_incr) / self.phi0).max(0.0);
        (m / n_star).powf(self.beta)
    }

    /// `(Σ ratio_n (Δ_n - τ)^+, Σ ratio_n δ_n (Δ_n - τ)^+)`, finite regime only.
    fn excess_above(&self, tau: f64) -> (f64, f64) {
        let p = self.first_above(tau);
        if p < self.incr.len() {
            let a = self.suf_p1[p] - tau * self.suf_p0[p];
            let b = self.suf_q1[p] - tau * self.suf_q0[p];
            (a, b)
        } else {
            let m = self.last_n as f64;
            let n_star = m + ((tau - self.rem_incr) / self.phi0).max(0.0);
            let mass = self.rem_mass * (m / n_star).powf(self.beta);
            let a = mass * self.phi0 * n_star / (self.beta - 1.0);
            (a, a * 0.5 * self.rem_delta)
        }
    }

    /// `Σ ratio_n δ_n^p` for `p = 0, 1, 2` over all deep cylinders.
    pub fn mass_sums(&self) -> [f64; 3] {
        [self.suf_p0[0], self.suf_q0[0], self.m2]
    }

    /// `Σ ratio_n δ_n^p Δ_n` for `p = 0, 1, 2`; `None` unless `β > 1`.
    pub fn first_moment_sums(&self) -> Option<[f64; 3]> {
        (self.beta > 1.0).then(|| [self.suf_p1[0], self.suf_q1[0], self.p2])
    }

    pub fn len(&self) -> usize {
        self.ratio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratio.is_empty()
    }
}

/// The first-return system sampled on the collocation grid.
///
/// Per-cylinder arrays are stored cylinder-major: entry `(n, i)` sits at
/// `(n - 1) * n_y + i` and describes the preimage `y_{a_n}(y_i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InducedSystem {
    map: LsvMap,
    roof: RoofPreset,
    params: InducedParams,
    grid: GridY,
    ladder: XiLadder,
    y_a: Vec<f64>,
    /// `1/|F'(y_a)|`.
    wleb: Vec<f64>,
    phi: Vec<f64>,
    /// Interpolated density at the preimages.
    h_at: Vec<f64>,
    h: Vec<f64>,
    h_slope: f64,
    /// `h''(1/2)`.
    h_curv: f64,
    deep: Option<DeepTail>,
    mu_cyl: Vec<f64>,
    mu_deep: f64,
    tau_tail: Vec<f64>,
    phi_bar: Option<f64>,
    density_residual: f64,
    density_iterations: usize,
    mass_defect: f64,
    distortion: DistortionReport,
}

impl InducedSystem {
    pub fn build(map: LsvMap, roof: RoofPreset, params: InducedParams) -> Result<Self> {
        if params.n_max < 16 {
            return Err(Error::InvalidArgument(format!(
                "n_max must be at least 16, got {}",
                params.n_max
            )));
        }
        if params.n_y < 32 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 32 nodes, got {}",
                params.n_y
            )));
        }
        let deep_len = if params.deep_tail {
            params.deep_len.max(params.n_max + 1)
        } else {
            params.n_max
        };
        let ladder = XiLadder::new(map, deep_len)?;
        let grid = GridY::new(params.n_y)?;
        let (n_y, n_max) = (params.n_y, params.n_max);
        let total = n_y * n_max;
        let mut y_a = vec![0.0; total];
        let mut wleb = vec![0.0; total];
        let mut phi = vec![0.0; total];
        for (i, &y) in grid.nodes().iter().enumerate() {
            let mut x = y;
            let mut d = 1.0;
            let mut birkhoff = 0.0;
            for n in 1..=n_max {
                // here x = g^{n-1}(y), d = Π f'(x_j), birkhoff = Σ φ_X(x_j), j = 1..n-1
                let ya = 0.5 * (1.0 + x);
                let idx = (n - 1) * n_y + i;
                y_a[idx] = ya;
                wleb[idx] = 0.5 / d;
                phi[idx] = roof.eval(ya) + birkhoff;
                if n < n_max {
                    x = map.solve_left(x)?;
                    d *= map.left_branch_derivative(x);
                    birkhoff += roof.eval(x);
                }
            }
        }
        let deep = params
            .deep_tail
            .then(|| DeepTail::build(&ladder, &roof, n_max, deep_len));

        let mut sys = Self {
            map,
            roof,
            params,
            grid,
            ladder,
            y_a,
            wleb,
            phi,
            h_at: Vec::new(),
            h: Vec::new(),
            h_slope: 0.0,
            h_curv: 0.0,
            deep,
            mu_cyl: Vec::new(),
            mu_deep: 0.0,
            tau_tail: Vec::new(),
            phi_bar: None,
            density_residual: f64::NAN,
            density_iterations: 0,
            mass_defect: 0.0,
            distortion: DistortionReport {
                c1_hat: f64::NAN,
                lipschitz_hat: f64::NAN,
                roof_oscillation: f64::NAN,
            },
        };
        sys.stationary_density()?;
        sys.fill_tables();
        Ok(sys)
    }

    /// Lebesgue transfer operator of `F` on the grid (real, `n_y × n_y`, row-major).
    fn lebesgue_matrix(&self) -> Vec<f64> {
        let n_y = self.params.n_y;
        let mut mat = vec![0.0; n_y * n_y];
        let mut card = vec![0.0; n_y];
        for n in 1..=self.params.n_max {
            for i in 0..n_y {
                let idx = (n - 1) * n_y + i;
                self.grid.cardinals_into(self.y_a[idx], &mut card);
                let w = self.wleb[idx];
                let row = &mut mat[i * n_y..(i + 1) * n_y];
                for (r, c) in row.iter_mut().zip(&card) {
                    *r += w * c;
                }
            }
        }
        if let Some(deep) = &self.deep {
            let [m0, m1, m2] = deep.mass_sums();
            let drow = self.grid.diff_row(0);
            let d2row = self.grid.diff2_row(0);
            for i in 0..n_y {
                let q = self.wleb[(self.params.n_max - 1) * n_y + i];
                let row = &mut mat[i * n_y..(i + 1) * n_y];
                row[0] += q * m0;
                for ((r, d), d2) in row.iter_mut().zip(&drow).zip(&d2row) {
                    *r += q * (m1 * d + 0.5 * m2 * d2);
                }
            }
        }
        mat
    }

    fn stationary_density(&mut self) -> Result<()> {
        let n_y = self.params.n_y;
        let mat = self.lebesgue_matrix();
        let cc = self.grid.quad_weights().to_vec();
        let mut h = vec![2.0; n_y];
        let mut next = vec![0.0; n_y];
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut mass = 1.0;
        while iterations < self.params.density_max_iter {
            iterations += 1;
            for (i, out) in next.iter_mut().enumerate() {
                *out = mat[i * n_y..(i + 1) * n_y].iter().zip(&h).map(|(a, b)| a * b).sum();
            }
            mass = next.iter().zip(&cc).map(|(a, b)| a * b).sum();
            next.iter_mut().for_each(|v| *v /= mass);
            residual = next.iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            std::mem::swap(&mut h, &mut next);
            if residual <= 0.1 * self.params.density_tol {
                break;
            }
        }
        // The truncated operator leaks (or gains) a little mass; rescale the
        // branch weights so the leading eigenvalue is exactly 1.
        self.mass_defect = mass - 1.0;
        self.wleb.iter_mut().for_each(|w| *w /= mass);
        for (i, out) in next.iter_mut().enumerate() {
            *out = mat[i * n_y..(i + 1) * n_y]
                .iter()
                .zip(&h)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / mass;
        }
        let fixed_residual = next.iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if fixed_residual > self.params.density_tol || h.iter().any(|&v| v <= 0.0) {
            return Err(Error::Convergence {
                what: "stationary density",
                iterations,
                residual: fixed_residual.max(residual),
            });
        }
        self.density_residual = fixed_residual;
        self.density_iterations = iterations;
        self.h_slope = self.grid.diff_row(0).iter().zip(&h).map(|(a, b)| a * b).sum();
        self.h_curv = self.grid.diff2_row(0).iter().zip(&h).map(|(a, b)| a * b).sum();
        self.h_at = self.y_a.iter().map(|&y| self.grid.interp_real(&h, y)).collect();
        self.h = h;
        Ok(())
    }

    fn fill_tables(&mut self) {
        let n_y = self.params.n_y;
        let n_max = self.params.n_max;
        let cc = self.grid.quad_weights();
        self.mu_cyl = (1..=n_max)
            .map(|n| {
                let base = (n - 1) * n_y;
                (0..n_y)
                    .map(|i| cc[i] * self.wleb[base + i] * self.h_at[base + i])
                    .sum()
            })
            .collect();
        self.mu_deep = match &self.deep {
            Some(deep) => {
                let expanded = self.deep_expansion(deep.mass_sums());
                let base = (n_max - 1) * n_y;
                (0..n_y).map(|i| cc[i] * self.wleb[base + i] * expanded).sum()
            }
            None => 0.0,
        };
        let mut tail = vec![0.0; n_max + 1];
        tail[n_max] = self.mu_deep;
        for n in (0..n_max).rev() {
            tail[n] = tail[n + 1] + self.mu_cyl[n];
        }
        self.tau_tail = tail;
        if self.regime() == Regime::Finite {
            let r = self.roof_moment_vector(None);
            self.phi_bar = Some(r.iter().zip(cc).zip(&self.h).map(|((a, b), c)| a * b * c).sum());
        }
        self.distortion = self.compute_distortion();
    }

    /// `(R_ψ 1)(y_i)` for `ψ = φ` or `ψ = (φ - k)^+` (with `Some(k)`), including the deep tail.
    pub fn roof_moment_vector(&self, k: Option<f64>) -> Vec<f64> {
        let n_y = self.params.n_y;
        let n_max = self.params.n_max;
        let k0 = k.unwrap_or(0.0);
        let mut out = vec![0.0; n_y];
        for n in 1..=n_max {
            let base = (n - 1) * n_y;
            for (i, o) in out.iter_mut().enumerate() {
                let idx = base + i;
                let excess = (self.phi[idx] - k0).max(0.0);
                *o += self.wleb[idx] * self.h_at[idx] * excess;
            }
        }
        if let Some(deep) = &self.deep {
            if deep.beta > 1.0 {
                let base = (n_max - 1) * n_y;
                let mass = self.deep_expansion(deep.mass_sums());
                let first = self.deep_expansion(deep.first_moment_sums().unwrap_or_default());
                for (i, o) in out.iter_mut().enumerate() {
                    let shift = self.phi[base + i] - k0;
                    *o += self.wleb[base + i] * (shift * mass + first);
                }
            }
        }
        for (o, h) in out.iter_mut().zip(&self.h) {
            *o /= h;
        }
        out
    }

    fn compute_distortion(&self) -> DistortionReport {
        let n_y = self.params.n_y;
        let nodes = self.grid.nodes();
        let mut c1: f64 = 0.0;
        let mut lip: f64 = 0.0;
        let mut osc: f64 = 0.0;
        for n in 1..=self.params.n_max {
            let base = (n - 1) * n_y;
            let mu = self.mu_cyl[n - 1];
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n_y {
                let p = self.mu_weight(n, i);
                c1 = c1.max(p / mu);
                if i + 1 < n_y {
                    let q = self.mu_weight(n, i + 1);
                    lip = lip.max((p - q).abs() / (p * (nodes[i + 1] - nodes[i])));
                }
                lo = lo.min(self.phi[base + i]);
                hi = hi.max(self.phi[base + i]);
            }
            osc = osc.max((hi - lo) / lo);
        }
        DistortionReport {
            c1_hat: c1,
            lipschitz_hat: lip,
            roof_oscillation: osc,
        }
    }

    pub fn map(&self) -> &LsvMap {
        &self.map
    }

    pub fn roof(&self) -> &RoofPreset {
        &self.roof
    }

    pub fn params(&self) -> &InducedParams {
        &self.params
    }

    pub fn grid(&self) -> &GridY {
        &self.grid
    }

    pub fn ladder(&self) -> &XiLadder {
        &self.ladder
    }

    pub fn beta(&self) -> f64 {
        self.map.beta()
    }

    pub fn regime(&self) -> Regime {
        Regime::of_beta(self.map.beta())
    }

    pub fn n_max(&self) -> usize {
        self.params.n_max
    }

    pub fn n_y(&self) -> usize {
        self.params.n_y
    }

    /// Density of `μ` at the grid nodes, `∫_Y h dLeb = 1`.
    pub fn density(&self) -> &[f64] {
        &self.h
    }

    /// `h(1/2)`; the left endpoint is a collocation node.
    pub fn h_half(&self) -> f64 {
        self.h[0]
    }

    pub fn h_slope_half(&self) -> f64 {
        self.h_slope
    }

    pub fn density_residual(&self) -> f64 {
        self.density_residual
    }

    pub fn density_iterations(&self) -> usize {
        self.density_iterations
    }

    /// Leading eigenvalue of the truncated Lebesgue operator minus 1, before rescaling.
    pub fn mass_defect(&self) -> f64 {
        self.mass_defect
    }

    pub fn deep(&self) -> Option<&DeepTail> {
        self.deep.as_ref()
    }

    pub fn distortion(&self) -> &DistortionReport {
        &self.distortion
    }

    /// Mean roof `∫ φ dμ`; `None` outside the finite regime.
    pub fn phi_bar(&self) -> Option<f64> {
        self.phi_bar
    }

    /// `μ(a_n)` for `1 ≤ n ≤ n_max`.
    pub fn mu_cylinder(&self, n: usize) -> f64 {
        self.mu_cyl[n - 1]
    }

    /// Aggregated mass of the cylinders past `n_max`.
    pub fn mu_deep(&self) -> f64 {
        self.mu_deep
    }

    /// `μ(τ > n)` for `0 ≤ n ≤ n_max`.
    pub fn tau_tail(&self, n: usize) -> f64 {
        self.tau_tail[n]
    }

    pub fn tau_tail_table(&self) -> &[f64] {
        &self.tau_tail
    }

    #[inline]
    pub(crate) fn index(&self, n: usize, i: usize) -> usize {
        (n - 1) * self.params.n_y + i
    }

    /// Preimage `y_{a_n}(y_i)`.
    pub fn preimage(&self, n: usize, i: usize) -> f64 {
        self.y_a[self.index(n, i)]
    }

    /// `φ(y_{a_n}(y_i))`.
    pub fn roof_value(&self, n: usize, i: usize) -> f64 {
        self.phi[self.index(n, i)]
    }

    /// `1/|F'(y_{a_n}(y_i))|`.
    pub fn lebesgue_weight(&self, n: usize, i: usize) -> f64 {
        self.wleb[self.index(n, i)]
    }

    /// The `μ`-branch weight `h(y_a) / (h(y_i) |F'(y_a)|)`.
    pub fn mu_weight(&self, n: usize, i: usize) -> f64 {
        let idx = self.index(n, i);
        self.wleb[idx] * self.h_at[idx] / self.h[i]
    }

    /// `Σ_p c_p (h)^{(p)}(1/2)/p!` for deep-cylinder sums `c`.
    pub(crate) fn deep_expansion(&self, c: [f64; 3]) -> f64 {
        c[0] * self.h[0] + c[1] * self.h_slope + 0.5 * c[2] * self.h_curv
    }

    pub(crate) fn raw(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.y_a, &self.wleb, &self.phi, &self.h_at)
    }

    pub fn cylinder(&self, n: usize) -> Result<Cylinder> {
        if n == 0 {
            return Err(Error::InvalidArgument("cylinders are indexed from 1".into()));
        }
        Ok(Cylinder {
            n,
            left: 0.5 * (1.0 + self.ladder.get(n)),
            right: 0.5 * (1.0 + self.ladder.get(n - 1)),
        })
    }

    /// Branch inverse `y ↦ y_a ∈ a_n` for an arbitrary `y ∈ Y`.
    pub fn inverse_branch(&self, n: usize, y: f64) -> Result<f64> {
        check_y(y)?;
        if n == 0 {
            return Err(Error::InvalidArgument("cylinders are indexed from 1".into()));
        }
        let mut x = y;
        for _ in 1..n {
            x = self.map.solve_left(x)?;
        }
        Ok(0.5 * (1.0 + x))
    }

    /// `|F'(y_a)|` along the branch of `a_n` over `y`.
    pub fn deriv_product(&self, n: usize, y: f64) -> Result<f64> {
        check_y(y)?;
        let mut x = y;
        let mut d = 2.0;
        for _ in 1..n {
            x = self.map.solve_left(x)?;
            d *= self.map.left_branch_derivative(x);
        }
        Ok(d)
    }

    /// Induced roof at the preimage in `a_n` of `y`.
    pub fn roof_on_branch(&self, n: usize, y: f64) -> Result<f64> {
        check_y(y)?;
        let mut x = y;
        let mut acc = 0.0;
        for _ in 1..n {
            x = self.map.solve_left(x)?;
            acc += self.roof.eval(x);
        }
        Ok(acc + self.roof.eval(0.5 * (1.0 + x)))
    }

    /// `F(y) = f^{τ(y)}(y)` by exact iteration, with the return time and roof.
    pub fn first_return(&self, y: f64) -> Result<(f64, usize, f64)> {
        check_y(y)?;
        let mut x = y;
        let mut n = 0;
        let mut acc = 0.0;
        loop {
            acc += self.roof.eval(x);
            x = self.map.apply(x)?;
            n += 1;
            if x >= 0.5 {
                return Ok((x, n, acc));
            }
            if x == 0.0 {
                return Err(Error::Domain("orbit fell onto the fixed point".into()));
            }
        }
    }

    /// Evaluate the per-cylinder column `values[(n-1)*n_y + ·]` at `y`.
    fn column_interp(&self, values: &[f64], n: usize, y: f64) -> f64 {
        let base = (n - 1) * self.params.n_y;
        self.grid.interp_real(&values[base..base + self.params.n_y], y)
    }

    fn column_range(&self, values: &[f64], n: usize) -> (f64, f64) {
        let base = (n - 1) * self.params.n_y;
        values[base..base + self.params.n_y]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    fn mass_column(&self, n: usize) -> Vec<f64> {
        let base = (n - 1) * self.params.n_y;
        (0..self.params.n_y)
            .map(|i| self.wleb[base + i] * self.h_at[base + i])
            .collect()
    }

    /// Pieces of `Y` where `φ_n > t`, found on the interpolant.
    fn pieces_above(&self, n: usize, t: f64) -> Vec<(f64, f64)> {
        const SAMPLES: usize = 256;
        let f = |y: f64| self.column_interp(&self.phi, n, y) - t;
        let mut pieces = Vec::new();
        let mut start: Option<f64> = None;
        let mut prev_y = 0.5;
        let mut prev_v = f(prev_y);
        if prev_v > 0.0 {
            start = Some(0.5);
        }
        for k in 1..=SAMPLES {
            let y = 0.5 + 0.5 * k as f64 / SAMPLES as f64;
            let v = f(y);
            if (v > 0.0) != (prev_v > 0.0) {
                let root = bisect_root(&f, prev_y, y);
                match start.take() {
                    Some(a) => pieces.push((a, root)),
                    None => start = Some(root),
                }
            }
            prev_y = y;
            prev_v = v;
        }
        if let Some(a) = start {
            pieces.push((a, 1.0));
        }
        pieces
    }

    /// Integrate `g(y)·m_n(y)` over the pieces where `φ_n > t`.
    fn straddle_integral(&self, n: usize, t: f64, g: impl Fn(f64) -> f64) -> f64 {
        let (gx, gw) = gauss_legendre(24);
        let mass = self.mass_column(n);
        let mut acc = 0.0;
        for (a, b) in self.pieces_above(n, t) {
            let half = 0.5 * (b - a);
            for (x, w) in gx.iter().zip(&gw) {
                let y = a + half * (x + 1.0);
                acc += half * w * self.grid.interp_real(&mass, y) * g(y);
            }
        }
        acc
    }

    /// `μ(φ > t)`.
    pub fn mu_phi_greater(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for n in 1..=self.params.n_max {
            let (lo, hi) = self.column_range(&self.phi, n);
            if lo > t {
                acc += self.mu_cyl[n - 1];
            } else if hi > t {
                acc += self.straddle_integral(n, t, |_| 1.0);
            }
        }
        acc + self.deep_over_nodes(t, |deep, tau| deep.mass_above(tau))
    }

    /// `γ(t) = ∫_t^∞ μ(φ > τ) dτ = ∫ (φ - t)^+ dμ`, finite regime only.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        if self.regime() != Regime::Finite {
            return Err(Error::Regime("γ(t) needs β > 1".into()));
        }
        let n_y = self.params.n_y;
        let cc = self.grid.quad_weights();
        let mut acc = 0.0;
        for n in 1..=self.params.n_max {
            let (lo, hi) = self.column_range(&self.phi, n);
            if lo > t {
                let base = (n - 1) * n_y;
                acc += (0..n_y)
                    .map(|i| cc[i] * self.wleb[base + i] * self.h_at[base + i] * (self.phi[base + i] - t))
                    .sum::<f64>();
            } else if hi > t {
                acc += self.straddle_integral(n, t, |y| self.column_interp(&self.phi, n, y) - t);
            }
        }
        Ok(acc + self.deep_over_nodes(t, |deep, tau| deep.excess_above(tau)))
    }

    /// CC quadrature over nodes of the deep-cylinder contribution, given the
    /// per-node ladder sums `(A, B)` above the threshold `t - φ_N(y_i)`.
    fn deep_over_nodes(&self, t: f64, sums: impl Fn(&DeepTail, f64) -> (f64, f64)) -> f64 {
        let Some(deep) = &self.deep else { return 0.0 };
        let n_y = self.params.n_y;
        let base = (self.params.n_max - 1) * n_y;
        let cc = self.grid.quad_weights();
        (0..n_y)
            .map(|i| {
                let (a, b) = sums(deep, t - self.phi[base + i]);
                cc[i] * self.wleb[base + i] * (a * self.h[0] + b * self.h_slope)
            })
            .sum()
    }

    /// `c₁`: analytic `¼β^β h(½)` against the level of `n^β μ(τ>n)`.
    pub fn return_time_tail_constant(&self) -> Result<TailConstant> {
        let n_max = self.params.n_max;
        if n_max < 100 {
            return Err(Error::FitWindow(format!(
                "return-time tail needs n_max >= 100 for two decades, got {n_max}"
            )));
        }
        let beta = self.beta();
        let analytic = 0.25 * beta.powf(beta) * self.h_half();
        let lo = n_max / 10;
        let mut levels: Vec<f64> = (lo..=n_max).map(|n| (n as f64).powf(beta) * self.tau_tail[n]).collect();
        let fitted = median(&mut levels);
        let ns: Vec<f64> = (lo..=n_max).map(|n| n as f64).collect();
        let vals: Vec<f64> = (lo..=n_max).map(|n| self.tau_tail[n]).collect();
        let fit = fit_loglog(&ns, &vals, None)?;
        Ok(TailConstant {
            analytic,
            fitted,
            exponent: fit.exponent,
            window: (lo as f64, n_max as f64),
        })
    }

    /// Fitted exponent of `μ(τ > n)` over `[n_lo, n_max]`.
    pub fn return_time_tail_exponent(&self, n_lo: usize) -> Result<f64> {
        let n_max = self.params.n_max;
        if n_lo == 0 || 10 * n_lo > n_max {
            return Err(Error::FitWindow(format!(
                "window [{n_lo}, {n_max}] is shorter than a decade"
            )));
        }
        let ns: Vec<f64> = (n_lo..=n_max).map(|n| n as f64).collect();
        let vals: Vec<f64> = (n_lo..=n_max).map(|n| self.tau_tail[n]).collect();
        Ok(fit_loglog(&ns, &vals, None)?.exponent)
    }

    /// Top of the window on which `μ(φ > t)` is fully resolved.
    pub fn roof_fit_top(&self) -> f64 {
        0.5 * self.params.n_max as f64 * self.roof.at_zero()
    }

    /// `c₀`: analytic `¼β^β φ_X(0)^β h(½)` against the level of `t^β μ(φ>t)`.
    pub fn roof_tail_constant(&self) -> Result<TailConstant> {
        if self.params.n_max < 100 {
            return Err(Error::FitWindow(format!(
                "roof tail needs n_max >= 100, got {}",
                self.params.n_max
            )));
        }
        let beta = self.beta();
        let analytic = 0.25 * beta.powf(beta) * self.roof.at_zero().powf(beta) * self.h_half();
        let hi = self.roof_fit_top();
        let lo = hi / 10.0;
        let ts: Vec<f64> = (0..40).map(|k| lo * 10f64.powf(k as f64 / 39.0)).collect();
        let vals: Vec<f64> = ts.iter().map(|&t| self.mu_phi_greater(t)).collect();
        let mut levels: Vec<f64> = ts.iter().zip(&vals).map(|(t, v)| t.powf(beta) * v).collect();
        let fitted = median(&mut levels);
        let fit = fit_loglog(&ts, &vals, None)?;
        Ok(TailConstant {
            analytic,
            fitted,
            exponent: fit.exponent,
            window: (lo, hi),
        })
    }

    /// Row sums of the `μ`-transfer operator at `s = 0` (should be 1).
    pub fn stochasticity_defect(&self) -> f64 {
        let n_y = self.params.n_y;
        let mut rows = vec![0.0; n_y];
        for n in 1..=self.params.n_max {
            for (i, r) in rows.iter_mut().enumerate() {
                *r += self.mu_weight(n, i);
            }
        }
        if let Some(deep) = &self.deep {
            let expanded = self.deep_expansion(deep.mass_sums());
            let base = (self.params.n_max - 1) * n_y;
            for (i, r) in rows.iter_mut().enumerate() {
                *r += self.wleb[base + i] * expanded / self.h[i];
            }
        }
        rows.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn check_y(y: f64) -> Result<()> {
    if (0.5..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(Error::Domain(format!("point {y} outside Y = [1/2, 1]")))
    }
}

fn bisect_root(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa_pos = f(a) > 0.0;
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == fa_pos {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-15 {
            break;
        }
    }
    0.5 * (a + b)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::RoofKind;

    fn small(alpha: f64) -> InducedSystem {
        let params = InducedParams {
            n_max: 200,
            n_y: 48,
            deep_len: 1 << 14,
            ..Default::default()
        };
        InducedSystem::build(
            LsvMap::new(alpha).unwrap(),
            RoofPreset::floored(RoofKind::OnePlusX),
            params,
        )
        .unwrap()
    }

    #[test]
    fn cylinder_geometry() {
        let sys = small(1.0);
        let a1 = sys.cylinder(1).unwrap();
        assert_eq!((a1.left, a1.right), (0.75, 1.0));
        let a2 = sys.cylinder(2).unwrap();
        assert!((a2.left - 0.654_508_50).abs() < 1e-7);
        assert_eq!(a2.right, 0.75);
        for n in [1, 2, 7, 50, 199] {
            let c = sys.cylinder(n).unwrap();
            for i in [0, 10, 47] {
                assert!(c.contains(sys.preimage(n, i)) || sys.preimage(n, i) == c.left);
            }
        }
    }

    #[test]
    fn branch_consistency() {
        let sys = small(1.5);
        for n in [1, 3, 40] {
            let y = 0.83;
            let ya = sys.inverse_branch(n, y).unwrap();
            let (fy, tau, phi) = sys.first_return(ya).unwrap();
            assert_eq!(tau, n);
            assert!((fy - y).abs() < 1e-10);
            assert!((phi - sys.roof_on_branch(n, y).unwrap()).abs() < 1e-9);
        }
        assert!(sys.inverse_branch(2, 0.4).is_err());
    }

    #[test]
    fn density_and_mass() {
        for alpha in [0.67, 1.5] {
            let sys = small(alpha);
            assert!(sys.density_residual() <= 1e-10);
            assert!(sys.density().iter().all(|&h| h > 0.0));
            assert!((sys.tau_tail(0) - 1.0).abs() < 1e-8, "{}", sys.tau_tail(0));
            assert!(sys.stochasticity_defect() < 1e-8);
        }
    }

    #[test]
    fn gamma_at_zero_is_mean_roof() {
        let sys = small(0.67);
        let g0 = sys.gamma(0.0).unwrap();
        let pb = sys.phi_bar().unwrap();
        assert!((g0 / pb - 1.0).abs() < 1e-8, "{g0} vs {pb}");
        assert!(sys.gamma(20.0).unwrap() < sys.gamma(10.0).unwrap());
        assert!(small(1.5).gamma(1.0).is_err());
    }

    #[test]
    fn fit_window_guard() {
        let sys = InducedSystem::build(
            LsvMap::new(1.5).unwrap(),
            RoofPreset::floored(RoofKind::OnePlusX),
            InducedParams {
                n_max: 50,
                n_y: 32,
                deep_len: 1 << 12,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(matches!(sys.return_time_tail_constant(), Err(Error::FitWindow(_))));
    }
}
