//! Sampled correlation curves `t ↦ ρ(t)` with error bars.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Renewal,
    MonteCarlo,
    Prediction,
    Synthetic,
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Renewal => "renewal",
            Self::MonteCarlo => "monte_carlo",
            Self::Prediction => "prediction",
            Self::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    source: Source,
    points: Vec<CurvePoint>,
}

impl CorrelationCurve {
    pub fn new(source: Source, points: Vec<CurvePoint>) -> Self {
        Self { source, points }
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Value at a grid time (exact match up to relative 1e-12).
    pub fn at(&self, t: f64) -> Option<CurvePoint> {
        self.points
            .iter()
            .copied()
            .find(|p| (p.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// New curve with `f(t, value)` applied pointwise; errors are kept.
    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            source: self.source,
            points: self
                .points
                .iter()
                .map(|p| CurvePoint {
                    t: p.t,
                    value: f(p.t, p.value),
                    error: p.error,
                })
                .collect(),
        }
    }

    /// CSV `t,rho,error_bar,provenance`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,rho,error_bar,provenance")?;
        for p in &self.points {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{}",
                p.t,
                p.value,
                p.error,
                self.source.name()
            )?;
        }
        Ok(())
    }
}

/// `n` log-spaced times on `[t0, t1]`.
pub fn log_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t0];
    }
    let (a, b) = (t0.ln(), t1.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}
