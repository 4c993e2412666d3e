//! The LSV intermittent map family, roof presets, and the preimage ladder
//! that generates the first-return partition of `Y = [1/2, 1]`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Relative tolerance for the left-branch root solves.
const ROOT_RTOL: f64 = 1e-15;
const ROOT_MAX_ITER: usize = 200;

/// Interval map with one indifferent fixed point at 0 and an affine-ish
/// full branch over `[1/2, 1]`.
pub trait IntermittentMap {
    fn apply(&self, x: f64) -> Result<f64>;
    fn derivative(&self, x: f64) -> Result<f64>;
    /// Preimage of `y ∈ [0, 1]` under the branch that contains the
    /// indifferent fixed point.
    fn left_inverse(&self, y: f64) -> Result<f64>;
}

/// `f(x) = x(1 + 2^α x^α)` on `[0, 1/2)`, `2x - 1` on `[1/2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsvMap {
    alpha: f64,
    beta: f64,
    two_pow_alpha: f64,
}

impl LsvMap {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "map parameter alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            beta: 1.0 / alpha,
            two_pow_alpha: 2f64.powf(alpha),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Tail exponent `β = 1/α`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Left branch without domain checks; valid for `x ∈ [0, 1/2]`.
    #[inline]
    pub fn left_branch(&self, x: f64) -> f64 {
        x * (1.0 + self.two_pow_alpha * x.powf(self.alpha))
    }

    #[inline]
    pub fn left_branch_derivative(&self, x: f64) -> f64 {
        1.0 + (self.alpha + 1.0) * self.two_pow_alpha * x.powf(self.alpha)
    }

    /// `f` without the domain check, for hot loops over points known to be in `[0, 1]`.
    #[inline]
    pub fn apply_unchecked(&self, x: f64) -> f64 {
        if x < 0.5 {
            self.left_branch(x)
        } else {
            2.0 * x - 1.0
        }
    }

    /// Left-branch preimage by Newton's method bracketed with bisection.
    pub fn solve_left(&self, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("left inverse needs y in [0,1], got {y}")));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        if y == 1.0 {
            return Ok(0.5);
        }
        // f(x) >= x and f(x) <= x(1 + (2y)^α) for x <= y bracket the root.
        let mut lo = y / (1.0 + (2.0 * y).powf(self.alpha));
        let mut hi = y.min(0.5);
        let mut x = y / (1.0 + self.two_pow_alpha * lo.powf(self.alpha));
        if !(lo..=hi).contains(&x) {
            x = 0.5 * (lo + hi);
        }
        for _ in 0..ROOT_MAX_ITER {
            let r = self.left_branch(x) - y;
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = r / self.left_branch_derivative(x);
            let mut next = x - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= ROOT_RTOL * next.abs() || hi - lo <= ROOT_RTOL * hi {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::Convergence {
            what: "left-branch inverse",
            iterations: ROOT_MAX_ITER,
            residual: (self.left_branch(x) - y).abs(),
        })
    }

    /// The backward orbit `ξ_0 = 1, ξ_1 = 1/2, f(ξ_{n+1}) = ξ_n` with
    /// `ξ_{n+1}` on the left branch.
    pub fn xi_sequence(&self, n_max: usize) -> Result<Vec<f64>> {
        if n_max < 1 {
            return Err(Error::InvalidArgument("xi ladder needs n_max >= 1".into()));
        }
        let mut xi = Vec::with_capacity(n_max + 1);
        xi.push(1.0);
        xi.push(0.5);
        while xi.len() <= n_max {
            let next = self.solve_left(*xi.last().unwrap())?;
            xi.push(next);
        }
        Ok(xi)
    }
}

impl IntermittentMap for LsvMap {
    fn apply(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        Ok(self.apply_unchecked(x))
    }

    fn derivative(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        Ok(if x < 0.5 { self.left_branch_derivative(x) } else { 2.0 })
    }

    fn left_inverse(&self, y: f64) -> Result<f64> {
        self.solve_left(y)
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("point {x} outside [0,1]")))
    }
}

/// Preimage ladder cached once per map, with an asymptotic continuation
/// `ξ_n ≈ (α 2^α n + C)^{-1/α}` calibrated at the last rung.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XiLadder {
    map: LsvMap,
    xi: Vec<f64>,
    offset: f64,
}

impl XiLadder {
    pub fn new(map: LsvMap, n_max: usize) -> Result<Self> {
        let xi = map.xi_sequence(n_max)?;
        let last = *xi.last().unwrap();
        let a = map.alpha * map.two_pow_alpha;
        let offset = last.powf(-map.alpha) - a * n_max as f64;
        Ok(Self { map, xi, offset })
    }

    pub fn map(&self) -> &LsvMap {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.xi
    }

    /// `ξ_n`, computed exactly inside the ladder and asymptotically past it.
    pub fn get(&self, n: usize) -> f64 {
        if n < self.xi.len() {
            self.xi[n]
        } else {
            let a = self.map.alpha * self.map.two_pow_alpha;
            (a * n as f64 + self.offset).powf(-self.map.beta)
        }
    }

    /// Return time `n` of `y ∈ Y`, i.e. the index with `y ∈ a_n`.
    /// Points on a cylinder boundary belong to the shallower cylinder.
    pub fn return_time(&self, y: f64) -> u64 {
        let x = 2.0 * y - 1.0;
        if x <= 0.0 {
            return u64::MAX;
        }
        // xi is strictly decreasing: find n with xi[n] < x <= xi[n-1].
        let last = *self.xi.last().unwrap();
        if x > last {
            let idx = self.xi.partition_point(|&v| v > x);
            return idx.max(1) as u64;
        }
        let a = self.map.alpha * self.map.two_pow_alpha;
        let n = ((x.powf(-self.map.alpha) - self.offset) / a).ceil();
        n.max(self.xi.len() as f64) as u64
    }
}

/// Shape of the base roof function `φ_X` before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoofKind {
    OnePlusX,
    TwoPlusCos,
    Const,
}

impl RoofKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "one_plus_x" => Ok(Self::OnePlusX),
            "two_plus_cos" => Ok(Self::TwoPlusCos),
            "const" => Ok(Self::Const),
            other => Err(Error::Config(format!("unknown roof preset '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::OnePlusX => "one_plus_x",
            Self::TwoPlusCos => "two_plus_cos",
            Self::Const => "const",
        }
    }

    #[inline]
    fn base(&self, x: f64) -> f64 {
        match self {
            Self::OnePlusX => 1.0 + x,
            Self::TwoPlusCos => 2.0 + (2.0 * PI * x).cos(),
            Self::Const => 1.0,
        }
    }
}

/// Minimum of the induced roof the presets are scaled up to.
pub const ROOF_FLOOR: f64 = 2.5;

/// A scaled roof `φ_X = scale · base(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoofPreset {
    kind: RoofKind,
    scale: f64,
}

impl RoofPreset {
    /// Preset scaled so that the induced roof satisfies `min φ >= 2.5`.
    pub fn floored(kind: RoofKind) -> Self {
        let min_induced = Self::min_induced_roof(kind, 1.0);
        let scale = (ROOF_FLOOR / min_induced).max(1.0);
        Self { kind, scale }
    }

    /// Preset with an explicit scale; the floor is not enforced.
    pub fn with_scale(kind: RoofKind, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "roof scale must be positive, got {scale}"
            )));
        }
        Ok(Self { kind, scale })
    }

    pub fn kind(&self) -> RoofKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Hölder exponent of every shipped preset.
    pub fn eta(&self) -> f64 {
        1.0
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.scale * self.kind.base(x)
    }

    /// `φ_X(0)`, exact.
    pub fn at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// Infimum of `φ_X` over `[0, 1]`.
    pub fn phi_min(&self) -> f64 {
        self.scale * Self::sampled_min(self.kind, 0.0, 1.0)
    }

    /// Lower bound for the induced roof: return time one contributes
    /// `φ_X` on `[3/4, 1]`, longer excursions at least twice the infimum.
    pub fn induced_min(&self) -> f64 {
        Self::min_induced_roof(self.kind, self.scale)
    }

    fn min_induced_roof(kind: RoofKind, scale: f64) -> f64 {
        let first = Self::sampled_min(kind, 0.75, 1.0);
        let deep = 2.0 * Self::sampled_min(kind, 0.0, 1.0);
        scale * first.min(deep)
    }

    fn sampled_min(kind: RoofKind, a: f64, b: f64) -> f64 {
        (0..=4096)
            .map(|k| kind.base(a + (b - a) * k as f64 / 4096.0))
            .fold(f64::INFINITY, f64::min)
    }
}
