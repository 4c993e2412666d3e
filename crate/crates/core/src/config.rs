//! Experiment configuration: TOML on disk, every default materialized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::function_space::{Observable, YProfile};
use crate::induced::{InducedParams, Regime};
use crate::interval_maps::{LsvMap, RoofKind, RoofPreset};
use crate::inversion::{InversionPlan, InversionRegime};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Ref,
    #[serde(rename = "2x")]
    X2,
    #[serde(rename = "4x")]
    X4,
}

impl Resolution {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ref" => Ok(Self::Ref),
            "2x" => Ok(Self::X2),
            "4x" => Ok(Self::X4),
            other => Err(Error::Config(format!("unknown resolution '{other}' (ref, 2x, 4x)"))),
        }
    }

    pub fn factor(&self) -> usize {
        match self {
            Self::Ref => 1,
            Self::X2 => 2,
            Self::X4 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservableConfig {
    pub v: YProfile,
    pub w: YProfile,
    /// Replace `v` by `v - v̄`.
    pub zero_mean_v: bool,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        Self {
            v: YProfile::Cos,
            w: YProfile::Linear,
            zero_mean_v: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub n_y: usize,
    pub n_u: usize,
    pub n_max: usize,
    pub deep_tail: bool,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            n_y: 128,
            n_u: 64,
            n_max: 4000,
            deep_tail: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub per_decade: usize,
    pub b_geometric: f64,
    pub linear_step: f64,
    pub m_shift: usize,
    pub refine_tol: f64,
    pub refine_rounds: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        let p = InversionPlan::new(InversionRegime::Regular);
        Self {
            b_min: p.b_min,
            b_max: p.b_max,
            per_decade: p.per_decade,
            b_geometric: p.b_geometric,
            linear_step: p.linear_step,
            m_shift: p.m_shift,
            refine_tol: p.refine_tol,
            refine_rounds: p.refine_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    /// Times at which MC is compared with the renewal curve.
    pub check_times: Vec<f64>,
    /// Truncation `T` of the MC Laplace transform.
    pub laplace_t_max: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 1,
            check_times: vec![100.0, 1000.0],
            laplace_t_max: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            t_min: 100.0,
            t_max: 1e4,
            points: 21,
        }
    }
}

impl TimeGrid {
    pub fn values(&self) -> Vec<f64> {
        crate::curve::log_grid(self.t_min, self.t_max, self.points)
    }
}

/// Frequencies used by the spectral and operator subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Panels {
    /// `b` values of the `1 - λ(ib)` check.
    pub spectrum_b: Vec<f64>,
    /// Continuation path `0 → i·continuation_end`.
    pub continuation_end: f64,
    pub continuation_steps: usize,
    /// `b ≥ 1` values of the resolvent probe.
    pub probe_b: Vec<f64>,
    /// `(Re s, Im s)` panel of the renewal/MC cross-check.
    pub s_panel: Vec<[f64; 2]>,
    /// `(Re s, Im s)` panel of the splitting identities.
    pub split_panel: Vec<[f64; 2]>,
    /// `(Re s, Im s)` panel of the `D̂` bound (`Re s = 0` allowed).
    pub gap_panel: Vec<[f64; 2]>,
    /// Truncation level `k` of the splitting.
    pub split_k: f64,
    /// `b` values of the `‖Û(ib)‖₁` check.
    pub u_norm_b: Vec<f64>,
}

impl Default for Panels {
    fn default() -> Self {
        Self {
            spectrum_b: vec![1e-3, 3e-3, 1e-2],
            continuation_end: 0.5,
            continuation_steps: 50,
            probe_b: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            s_panel: vec![[0.5, 0.0], [1.0, 0.0], [0.5, 2.0], [0.2, 0.7]],
            split_panel: vec![[0.1, 0.0], [0.1, 1.0], [0.4, 1.1], [0.02, 0.3]],
            gap_panel: vec![[0.1, 0.0], [0.1, 1.0], [0.0, 2.0]],
            split_k: 25.0,
            u_norm_b: vec![0.0, 0.5, 2.0, 10.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub alpha: f64,
    pub roof: RoofKind,
    /// Derived from `alpha`; written out so that runs are self-describing.
    pub regime: Option<Regime>,
    pub observables: ObservableConfig,
    pub discretization: Discretization,
    pub inversion: InversionConfig,
    pub mc: McConfig,
    pub t_grid: TimeGrid,
    pub panels: Panels,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            alpha: 1.5,
            roof: RoofKind::OnePlusX,
            regime: None,
            observables: ObservableConfig::default(),
            discretization: Discretization::default(),
            inversion: InversionConfig::default(),
            mc: McConfig::default(),
            t_grid: TimeGrid::default(),
            panels: Panels::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `alpha`, with the regime filled in.
    pub fn for_alpha(alpha: f64) -> Result<Self> {
        let mut cfg = Self {
            alpha,
            ..Self::default()
        };
        cfg.materialize()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.materialize()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validate and fill in derived fields.
    pub fn materialize(&mut self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        let map = LsvMap::new(self.alpha).map_err(|e| Error::Config(e.to_string()))?;
        let regime = Regime::of_beta(map.beta());
        if let Some(given) = self.regime {
            if given != regime {
                return Err(Error::Config(format!(
                    "regime '{}' is inconsistent with alpha = {} ({})",
                    given.name(),
                    self.alpha,
                    regime.name()
                )));
            }
        }
        self.regime = Some(regime);
        let d = &self.discretization;
        if d.n_y < 8 || d.n_u < 8 || !d.n_u.is_multiple_of(2) || d.n_max < 100 {
            return Err(Error::Config(format!(
                "discretization out of range: n_y = {}, n_u = {} (even), n_max = {}",
                d.n_y, d.n_u, d.n_max
            )));
        }
        let g = &self.t_grid;
        if !(g.t_min > 0.0 && g.t_max > g.t_min && g.points >= 2) {
            return Err(Error::Config("t_grid needs 0 < t_min < t_max and points >= 2".into()));
        }
        if self.mc.samples < crate::monte_carlo::MIN_SAMPLES {
            return Err(Error::Config(format!(
                "mc.samples must be at least {}",
                crate::monte_carlo::MIN_SAMPLES
            )));
        }
        self.plan(0.0)?.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn regime(&self) -> Regime {
        self.regime.unwrap_or_else(|| Regime::of_beta(1.0 / self.alpha))
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.alpha
    }

    /// Scale the discretization by the resolution factor.
    pub fn with_resolution(mut self, res: Resolution) -> Self {
        let f = res.factor();
        self.discretization.n_y *= f;
        self.discretization.n_u *= f;
        self.discretization.n_max *= f;
        self
    }

    pub fn map(&self) -> Result<LsvMap> {
        LsvMap::new(self.alpha)
    }

    pub fn roof_preset(&self) -> RoofPreset {
        RoofPreset::floored(self.roof)
    }

    pub fn induced_params(&self) -> InducedParams {
        InducedParams {
            n_max: self.discretization.n_max,
            n_y: self.discretization.n_y,
            deep_tail: self.discretization.deep_tail,
            ..InducedParams::default()
        }
    }

    /// Observables before any mean subtraction.
    pub fn observables(&self) -> (Observable, Observable) {
        (Observable::new(self.observables.v), Observable::new(self.observables.w))
    }

    /// Inversion plan for this regime; `pole` is `v̄w̄` in the finite regime.
    pub fn plan(&self, pole: f64) -> Result<InversionPlan> {
        let beta = self.beta();
        let regime = match self.regime() {
            Regime::Infinite => InversionRegime::Infinite { beta },
            Regime::Boundary => InversionRegime::Boundary,
            Regime::Finite => InversionRegime::Finite { beta, pole },
        };
        let c = &self.inversion;
        Ok(InversionPlan {
            regime,
            b_min: c.b_min,
            b_max: c.b_max,
            per_decade: c.per_decade,
            b_geometric: c.b_geometric,
            linear_step: c.linear_step,
            m_shift: c.m_shift,
            refine_tol: c.refine_tol,
            refine_rounds: c.refine_rounds,
        })
    }

    /// SHA-256 of the materialized TOML without `out_dir`, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let mut key = self.clone();
        key.out_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(key.to_toml()?.as_bytes())))
    }

    /// Hash of the fields that determine the induced system (cache key).
    pub fn system_hash(&self) -> String {
        let key = format!(
            "v{SCHEMA_VERSION};alpha={:e};roof={};{:?}",
            self.alpha,
            self.roof.name(),
            self.induced_params()
        );
        hex::encode(Sha256::digest(key.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::for_alpha(0.67).unwrap();
        assert_eq!(cfg.regime, Some(Regime::Finite));
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn partial_file_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("schema = 1\nalpha = 1.0\n[mc]\nseed = 9\n").unwrap();
        assert_eq!(cfg.regime(), Regime::Boundary);
        assert_eq!(cfg.mc.seed, 9);
        assert_eq!(cfg.discretization.n_y, 128);
    }

    #[test]
    fn schema_violations() {
        for bad in [
            "schema = 2\nalpha = 1.5\n",
            "alpha = 1.5\nbogus = 1\n",
            "alpha = 1.5\nregime = \"finite\"\n",
            "alpha = -1.0\n",
            "alpha = 1.5\n[discretization]\nn_u = 7\n",
            "alpha = 1.5\n[inversion]\nper_decade = 4\n",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::for_alpha(1.5).unwrap();
        let mut b = a.clone();
        b.mc.seed = 2;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.system_hash(), b.system_hash());
        let c = a.clone().with_resolution(Resolution::X2);
        assert_eq!(c.discretization.n_y, 256);
        assert_ne!(a.system_hash(), c.system_hash());
    }
}
