//! Experiment runner behind the `lsvlab` binary.
//!
//! Every subcommand writes its CSVs, a `summary.json` with the pass/fail
//! checks, the materialized `config.toml` and a `plot.py` that reads only the
//! CSVs into `<out>/<subcommand>/`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{c0, c_beta_closed_form, fit_loglog, fit_powerlaw, predict, upper_envelope, Prediction};
use crate::config::ExperimentConfig;
use crate::curve::{CorrelationCurve, CurvePoint, Source};
use crate::function_space::{gauss_legendre, GridFunction, Observable, YProfile};
use crate::induced::{InducedSystem, Regime};
use crate::inversion::{invert, sample_table, small_b_limit_check, SampleTable};
use crate::monte_carlo::{mc_correlation, mc_laplace};
use crate::renewal::{decompose_t0, gap_integral, rho_hat, u_hat, u_hat_norm_check, RenewalContext};
use crate::transfer::{assemble_twisted, eig_continuation, resolvent_norm_probe, write_spectral_csv};
use crate::{Error, Result};

/// Directory for cached induced systems; unset disables the cache.
pub const CACHE_ENV: &str = "LSVLAB_CACHE_DIR";

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Tails,
    Spectrum,
    RhoHat,
    MixInfinite,
    MixFinite,
    MixZeroMean,
    ProbeResolvent,
    Decompose,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Self::Tails,
        Self::Spectrum,
        Self::RhoHat,
        Self::MixInfinite,
        Self::MixFinite,
        Self::MixZeroMean,
        Self::ProbeResolvent,
        Self::Decompose,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Tails => "tails",
            Self::Spectrum => "spectrum",
            Self::RhoHat => "rho-hat",
            Self::MixInfinite => "mix-infinite",
            Self::MixFinite => "mix-finite",
            Self::MixZeroMean => "mix-zero-mean",
            Self::ProbeResolvent => "probe-resolvent",
            Self::Decompose => "decompose",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subcommand '{name}'")))
    }
}

/// One pass/fail acceptance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub module: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub passed: bool,
    pub detail: String,
    pub version: String,
    pub config_hash: String,
}

/// A reported number that is not a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Value {
    pub value: f64,
    pub module: String,
    pub version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub subcommand: String,
    pub version: String,
    pub config_hash: String,
    pub alpha: f64,
    pub regime: Regime,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub values: BTreeMap<String, Value>,
    pub artifacts: Vec<String>,
}

impl Summary {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.values.get(name).map(|v| v.value)
    }

    /// One line per check: `PASS name = value in [lo, hi]`.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let range = match (c.lo, c.hi) {
                (Some(lo), Some(hi)) => format!(" in [{lo:.4}, {hi:.4}]"),
                (Some(lo), None) => format!(" >= {lo:.4}"),
                (None, Some(hi)) => format!(" <= {hi:.4e}"),
                (None, None) => String::new(),
            };
            let tag = if c.passed { "PASS" } else { "FAIL" };
            s += &format!("{tag} {} = {:.6e}{range}", c.name, c.value);
            if !c.detail.is_empty() {
                s += &format!(" ({})", c.detail);
            }
            s.push('\n');
        }
        s
    }
}

/// Plot instruction for the emitted script: CSV, x column, y columns, log axes.
struct Plot {
    csv: String,
    x: &'static str,
    ys: Vec<&'static str>,
    logx: bool,
    logy: bool,
}

struct Run<'c> {
    cfg: &'c ExperimentConfig,
    dir: PathBuf,
    hash: String,
    checks: Vec<Check>,
    values: BTreeMap<String, Value>,
    artifacts: Vec<String>,
    plots: Vec<Plot>,
}

impl<'c> Run<'c> {
    fn check(
        &mut self,
        name: &str,
        module: &str,
        value: f64,
        lo: Option<f64>,
        hi: Option<f64>,
        detail: String,
    ) -> bool {
        let passed = value.is_finite() && lo.is_none_or(|l| value >= l) && hi.is_none_or(|h| value <= h);
        self.push_check(name, module, value, lo, hi, passed, detail);
        passed
    }

    #[allow(clippy::too_many_arguments)]
    fn push_check(
        &mut self,
        name: &str,
        module: &str,
        value: f64,
        lo: Option<f64>,
        hi: Option<f64>,
        passed: bool,
        detail: String,
    ) {
        self.checks.push(Check {
            name: name.into(),
            module: module.into(),
            value,
            lo,
            hi,
            passed,
            detail,
            version: VERSION.into(),
            config_hash: self.hash.clone(),
        });
    }

    fn value(&mut self, name: &str, module: &str, value: f64) {
        self.values.insert(
            name.into(),
            Value {
                value,
                module: module.into(),
                version: VERSION.into(),
                config_hash: self.hash.clone(),
            },
        );
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        write(&mut out)?;
        out.flush()?;
        self.artifacts.push(name.into());
        Ok(())
    }

    fn plot(&mut self, csv: &str, x: &'static str, ys: &[&'static str], logx: bool, logy: bool) {
        self.plots.push(Plot {
            csv: csv.into(),
            x,
            ys: ys.to_vec(),
            logx,
            logy,
        });
    }
}

fn op<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Operation {
        op: name.into(),
        source: Box::new(e),
    })
}

/// Build the induced system, going through the cache when `LSVLAB_CACHE_DIR` is set.
pub fn load_system(cfg: &ExperimentConfig) -> Result<InducedSystem> {
    let build = || {
        op(
            "induced_system::build",
            InducedSystem::build(cfg.map()?, cfg.roof_preset(), cfg.induced_params()),
        )
    };
    let Some(dir) = std::env::var_os(CACHE_ENV) else {
        return build();
    };
    let dir = PathBuf::from(dir);
    let path = dir.join(format!("system-{}.bin", &cfg.system_hash()[..32]));
    if let Ok(bytes) = fs::read(&path) {
        match bincode::deserialize::<InducedSystem>(&bytes) {
            Ok(sys) => {
                info!("loaded cached system {}", path.display());
                return Ok(sys);
            }
            Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
        }
    }
    let sys = build()?;
    fs::create_dir_all(&dir)?;
    let bytes = bincode::serialize(&sys).map_err(|e| Error::Cache(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, &path)?;
    Ok(sys)
}

/// Run one subcommand; artifacts go to `<out>/<subcommand>/`.
pub fn run(sub: Subcommand, cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let dir = out.join(sub.name());
    fs::create_dir_all(&dir)?;
    let mut run = Run {
        cfg,
        dir,
        hash: cfg.hash()?,
        checks: Vec::new(),
        values: BTreeMap::new(),
        artifacts: Vec::new(),
        plots: Vec::new(),
    };
    fs::write(run.dir.join("config.toml"), cfg.to_toml()?)?;
    info!("{} (alpha = {}, config {})", sub.name(), cfg.alpha, &run.hash[..12]);
    match sub {
        Subcommand::Tails => tails(&mut run)?,
        Subcommand::Spectrum => spectrum(&mut run)?,
        Subcommand::RhoHat => rho_hat_panel(&mut run)?,
        Subcommand::MixInfinite => mix(&mut run, MixKind::Infinite)?,
        Subcommand::MixFinite => mix(&mut run, MixKind::Finite)?,
        Subcommand::MixZeroMean => mix(&mut run, MixKind::ZeroMean)?,
        Subcommand::ProbeResolvent => probe(&mut run)?,
        Subcommand::Decompose => decompose(&mut run)?,
    }
    let summary = Summary {
        subcommand: sub.name().into(),
        version: VERSION.into(),
        config_hash: run.hash.clone(),
        alpha: cfg.alpha,
        regime: cfg.regime(),
        passed: run.checks.iter().all(|c| c.passed),
        checks: run.checks.clone(),
        values: run.values.clone(),
        artifacts: run.artifacts.clone(),
    };
    fs::write(run.dir.join("plot.py"), plot_script(&run.plots))?;
    fs::write(
        run.dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.into()))? + "\n",
    )?;
    Ok(summary)
}

fn plot_script(plots: &[Plot]) -> String {
    let mut s = String::from(
        "import csv\nimport os\n\nimport matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\nHERE = os.path.dirname(os.path.abspath(__file__))\n\n\ndef num(x):\n    try:\n        return float(x)\n    except ValueError:\n        return float(\"nan\")\n\n\ndef read(name):\n    with open(os.path.join(HERE, name)) as f:\n        rows = list(csv.DictReader(f))\n    return {k: [num(r[k]) for r in rows] for k in rows[0]} if rows else {}\n\n\n",
    );
    for (k, p) in plots.iter().enumerate() {
        let ys: Vec<String> = p.ys.iter().map(|y| format!("\"{y}\"")).collect();
        s += &format!(
            "data = read(\"{}\")\nfig, ax = plt.subplots()\nfor y in [{}]:\n    xs, vs = data[\"{}\"], data[y]\n",
            p.csv,
            ys.join(", "),
            p.x
        );
        if p.logy {
            s += "    pts = [(a, abs(b)) for a, b in zip(xs, vs) if b != 0]\n    xs, vs = [a for a, _ in pts], [b for _, b in pts]\n";
        }
        s += "    ax.plot(xs, vs, label=y)\n";
        if p.logx {
            s += "ax.set_xscale(\"log\")\n";
        }
        if p.logy {
            s += "ax.set_yscale(\"log\")\n";
        }
        s += &format!(
            "ax.set_xlabel(\"{}\")\nax.legend()\nfig.savefig(os.path.join(HERE, \"plot_{k}.png\"), dpi=120)\nplt.close(fig)\n\n",
            p.x
        );
    }
    s
}

fn tails(run: &mut Run) -> Result<()> {
    let sys = load_system(run.cfg)?;
    let beta = sys.beta();
    let tau = op(
        "induced_system::return_time_tail_constant",
        sys.return_time_tail_constant(),
    )?;
    let phi = op("induced_system::roof_tail_constant", sys.roof_tail_constant())?;
    run.csv("xi_ladder.csv", |out| {
        writeln!(out, "n,xi")?;
        for (n, x) in sys.ladder().as_slice().iter().enumerate() {
            writeln!(out, "{n},{x:.17e}")?;
        }
        Ok(())
    })?;
    run.csv("tau_tail.csv", |out| {
        writeln!(out, "n,mu_tau_gt,scaled")?;
        for (n, &m) in sys.tau_tail_table().iter().enumerate().skip(1) {
            writeln!(out, "{n},{m:.17e},{:.17e}", (n as f64).powf(beta) * m)?;
        }
        Ok(())
    })?;
    let ts = crate::curve::log_grid(sys.roof().induced_min(), 10.0 * sys.roof_fit_top(), 120);
    run.csv("phi_tail.csv", |out| {
        writeln!(out, "t,mu_phi_gt,scaled")?;
        for &t in &ts {
            let m = sys.mu_phi_greater(t);
            writeln!(out, "{t:.17e},{m:.17e},{:.17e}", t.powf(beta) * m)?;
        }
        Ok(())
    })?;
    run.plot("tau_tail.csv", "n", &["mu_tau_gt"], true, true);
    run.plot("phi_tail.csv", "t", &["mu_phi_gt"], true, true);
    run.value("beta", "interval_maps", beta);
    run.value("h_half", "induced_system", sys.h_half());
    run.value("c1_analytic", "induced_system", tau.analytic);
    run.value("c1_fitted", "induced_system", tau.fitted);
    run.value("c0_analytic", "induced_system", phi.analytic);
    run.value("c0_fitted", "induced_system", phi.fitted);
    let w = format!("window [{:.0}, {:.0}]", tau.window.0, tau.window.1);
    run.check(
        "tau_tail_exponent",
        "induced_system",
        tau.exponent,
        Some(-beta - 0.05),
        Some(-beta + 0.05),
        w,
    );
    let w = format!("window [{:.0}, {:.0}]", phi.window.0, phi.window.1);
    run.check(
        "phi_tail_exponent",
        "induced_system",
        phi.exponent,
        Some(-beta - 0.05),
        Some(-beta + 0.05),
        w,
    );
    run.check(
        "c1_relative_gap",
        "induced_system",
        tau.relative_gap(),
        None,
        Some(0.1),
        format!("analytic {:.5}, fitted {:.5}", tau.analytic, tau.fitted),
    );
    run.check(
        "c0_relative_gap",
        "induced_system",
        phi.relative_gap(),
        None,
        Some(0.1),
        format!("analytic {:.5}, fitted {:.5}", phi.analytic, phi.fitted),
    );
    Ok(())
}

/// `∫_0^T μ(φ > t) dt - c₀T^{1-β}/(1-β)`, the first-order correction to `1 - λ(i/T)`.
fn tail_excess(sys: &InducedSystem, c0: f64, t_end: f64) -> f64 {
    let beta = sys.beta();
    let lo = sys.roof().induced_min();
    // μ(φ > t) = 1 below the smallest roof value
    let mut acc = lo;
    let (gx, gw) = gauss_legendre(8);
    let panels = (((t_end / lo).log10() * 16.0).ceil() as usize).max(1);
    let ratio = (t_end / lo).powf(1.0 / panels as f64);
    let mut a = lo;
    for _ in 0..panels {
        let b = a * ratio;
        let half = 0.5 * (b - a);
        for (x, w) in gx.iter().zip(&gw) {
            acc += half * w * sys.mu_phi_greater(a + half * (x + 1.0));
        }
        a = b;
    }
    acc - c0 * t_end.powf(1.0 - beta) / (1.0 - beta)
}

struct Eigen {
    b: Vec<f64>,
    gap: Vec<Complex64>,
}

fn eigen_gaps(sys: &InducedSystem, bs: &[f64]) -> Result<Eigen> {
    let mut b = bs.to_vec();
    b.sort_by(f64::total_cmp);
    let mut path = vec![Complex64::new(0.0, 0.0)];
    path.extend(b.iter().map(|&x| Complex64::new(0.0, x)));
    let data = op("transfer_ops::eig_continuation", eig_continuation(sys, &path))?;
    let gap = data[1..].iter().map(|d| 1.0 - d.lambda).collect();
    Ok(Eigen { b, gap })
}

fn spectrum(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let sys = load_system(cfg)?;
    let p = &cfg.panels;
    let path: Vec<Complex64> = (0..=p.continuation_steps)
        .map(|k| Complex64::new(0.0, p.continuation_end * k as f64 / p.continuation_steps as f64))
        .collect();
    let cont = op("transfer_ops::eig_continuation", eig_continuation(&sys, &path))?;
    run.csv("continuation.csv", |out| write_spectral_csv(&cont, out))?;
    let max_jump = cont
        .windows(2)
        .map(|w| (w[1].lambda - w[0].lambda).norm())
        .fold(0.0, f64::max);
    run.value("continuation_max_jump", "transfer_ops", max_jump);
    run.plot("continuation.csv", "s_im", &["lambda_re", "lambda_im"], false, false);

    if cfg.regime() != Regime::Infinite {
        run.check(
            "lambda_at_zero",
            "transfer_ops",
            (cont[0].lambda - 1.0).norm(),
            None,
            Some(1e-8),
            String::new(),
        );
        return Ok(());
    }
    let beta = sys.beta();
    let c0 = c0(&sys);
    let cb = op("asymptotics::c_beta", c_beta_closed_form(beta))?.norm();
    let eig = eigen_gaps(&sys, &p.spectrum_b)?;
    let fine_cfg = cfg.clone().with_resolution(crate::config::Resolution::X2);
    let fine = load_system(&fine_cfg)?;
    let eig_fine = eigen_gaps(&fine, &p.spectrum_b)?;
    let mut rows = Vec::new();
    for k in 0..eig.b.len() {
        let b = eig.b[k];
        let lead = c0 * cb * b.powf(beta);
        let d = tail_excess(&sys, c0, 1.0 / b);
        let corrected = (eig.gap[k] - Complex64::new(0.0, b * d)).norm() / lead;
        rows.push((
            b,
            eig.gap[k],
            eig.gap[k].norm() / lead,
            corrected,
            eig_fine.gap[k].norm() / lead,
            d,
        ));
    }
    run.csv("eigen_gap.csv", |out| {
        writeln!(out, "b,gap_re,gap_im,ratio,ratio_d_corrected,ratio_2x,d_eff")?;
        for r in &rows {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.0, r.1.re, r.1.im, r.2, r.3, r.4, r.5
            )?;
        }
        Ok(())
    })?;
    run.plot(
        "eigen_gap.csv",
        "b",
        &["ratio", "ratio_d_corrected", "ratio_2x"],
        true,
        false,
    );
    run.value("c0", "asymptotics", c0);
    run.value("abs_c_beta", "asymptotics", cb);
    for r in &rows {
        run.value(&format!("ratio_d_corrected_b{:.0e}", r.0), "asymptotics", r.3);
        run.check(
            &format!("eigen_ratio_b{:.0e}", r.0),
            "transfer_ops",
            r.2,
            Some(0.9),
            Some(1.1),
            format!("D-corrected {:.4}, 2x {:.6}", r.3, r.4),
        );
    }
    let mags: Vec<f64> = eig.gap.iter().map(|g| g.norm()).collect();
    let fit = op("asymptotics::fit_loglog", fit_loglog(&eig.b, &mags, None))?;
    run.check(
        "eigen_gap_exponent",
        "asymptotics",
        fit.exponent,
        Some(beta - 0.05),
        Some(beta + 0.05),
        String::new(),
    );
    // deviation at the smallest b under doubled (N_y, N_max)
    let (dev, dev2) = ((rows[0].2 - 1.0).abs(), (rows[0].4 - 1.0).abs());
    run.check(
        "refinement_deviation_change",
        "transfer_ops",
        dev2 - dev,
        None,
        Some(1e-6),
        format!("ref {dev:.6e}, 2x {dev2:.6e}"),
    );
    Ok(())
}

fn rho_hat_panel(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let sys = load_system(cfg)?;
    let ctx = op("renewal::context", RenewalContext::new(&sys, cfg.discretization.n_u))?;
    let (v, w) = cfg.observables();
    let (gv, gw) = (ctx.sample(&v), ctx.sample(&w));
    let s: Vec<Complex64> = cfg.panels.s_panel.iter().map(|&[a, b]| Complex64::new(a, b)).collect();
    let mut exact = Vec::with_capacity(s.len());
    for &z in &s {
        exact.push(op("renewal::rho_hat", rho_hat(&ctx, z, &gv, &gw))?.value);
    }
    let mc = op(
        "monte_carlo::mc_laplace",
        mc_laplace(&sys, &v, &w, &s, cfg.mc.laplace_t_max, cfg.mc.samples, cfg.mc.seed),
    )?;
    run.csv("rho_hat_panel.csv", |out| {
        writeln!(
            out,
            "s_re,s_im,renewal_re,renewal_im,mc_re,mc_im,mc_se_re,mc_se_im,truncation"
        )?;
        for k in 0..s.len() {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                s[k].re,
                s[k].im,
                exact[k].re,
                exact[k].im,
                mc.estimates[k].re,
                mc.estimates[k].im,
                mc.stderr[k].0,
                mc.stderr[k].1,
                mc.truncation[k]
            )?;
        }
        Ok(())
    })?;
    let bs = crate::curve::log_grid(1e-2, 20.0, 40);
    let line: Vec<Complex64> = bs.iter().map(|&b| Complex64::new(0.0, b)).collect();
    let samples = op(
        "renewal::rho_hat_batch",
        crate::renewal::rho_hat_batch(&ctx, &line, &gv, &gw),
    )?;
    run.csv("rho_hat_imaginary_axis.csv", |out| {
        crate::renewal::write_rho_hat_csv(&samples, out)
    })?;
    run.plot("rho_hat_imaginary_axis.csv", "s_im", &["rho_re", "rho_im"], true, false);
    for k in 0..s.len() {
        let err = (mc.stderr[k].0.powi(2) + mc.stderr[k].1.powi(2)).sqrt();
        let bound = 3.0 * (err + mc.truncation[k]);
        let diff = (exact[k] - mc.estimates[k]).norm();
        run.check(
            &format!("renewal_vs_mc_s{}{:+}i", s[k].re, s[k].im),
            "renewal",
            diff,
            None,
            Some(bound),
            format!("renewal {:.6e}, mc {:.6e}", exact[k], mc.estimates[k]),
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MixKind {
    Infinite,
    Finite,
    ZeroMean,
}

/// `v` shifted so that `∫ v dμ^φ = 0`.
fn zero_mean(ctx: &RenewalContext, v: Observable) -> Result<Observable> {
    let mass = ctx.mean_residue(&ctx.sample(&Observable::new(YProfile::One)))?.re;
    let mean = ctx.mean_residue(&ctx.sample(&v))?.re;
    Ok(Observable {
        shift: v.shift + mean / (mass * v.scale),
        ..v
    })
}

fn write_curve(run: &mut Run, name: &str, curve: &CorrelationCurve) -> Result<()> {
    run.csv(name, |out| curve.write_csv(out))
}

fn mix(run: &mut Run, kind: MixKind) -> Result<()> {
    let cfg = run.cfg;
    let regime = cfg.regime();
    let wanted = match kind {
        MixKind::Infinite => regime != Regime::Finite,
        _ => regime == Regime::Finite,
    };
    if !wanted {
        return Err(Error::Config(format!(
            "alpha = {} ({} regime) does not fit this pipeline",
            cfg.alpha,
            regime.name()
        )));
    }
    let sys = load_system(cfg)?;
    let ctx = op("renewal::context", RenewalContext::new(&sys, cfg.discretization.n_u))?;
    let (mut v, w) = cfg.observables();
    if kind == MixKind::ZeroMean || cfg.observables.zero_mean_v {
        v = zero_mean(&ctx, v)?;
    }
    // v̄ with the fiber rule of Û: v̄w̄ is then exactly the pole of the discrete ρ̂
    let vbar = ctx.mean_residue(&ctx.sample(&v))?.re;
    let wbar = ctx.mean(&ctx.sample(&w))?.re;
    run.value("vbar", "renewal", vbar);
    run.value("wbar", "renewal", wbar);
    let pole = if regime == Regime::Finite { vbar * wbar } else { 0.0 };
    let plan = cfg.plan(pole)?;
    let table = op("laplace_inversion::sample_table", sample_table(&ctx, &plan, &v, &w))?;
    run.csv("rho_hat_samples.csv", |out| {
        writeln!(out, "b,re,im")?;
        for (b, z) in table.b.iter().zip(&table.values) {
            writeln!(out, "{b:.17e},{:.17e},{:.17e}", z.re, z.im)?;
        }
        Ok(())
    })?;
    let ts = cfg.t_grid.values();
    let curve = op("laplace_inversion::invert", invert(&plan, &table, &ts))?;
    write_curve(run, "renewal.csv", &curve)?;

    let mc_times = cfg.mc.check_times.clone();
    let mc = op(
        "monte_carlo::mc_correlation",
        mc_correlation(&sys, &v, &w, &mc_times, cfg.mc.samples, cfg.mc.seed),
    )?;
    run.csv("mc.csv", |out| mc.write_csv(out))?;
    let at_mc = op("laplace_inversion::invert", invert(&plan, &table, &mc_times))?;
    run.plot("renewal.csv", "t", &["rho"], true, true);

    let window = (cfg.t_grid.t_min, cfg.t_grid.t_max);
    let beta = sys.beta();
    match kind {
        MixKind::Infinite => {
            let pred = op("asymptotics::predict", predict(&sys, vbar, wbar))?;
            write_prediction(run, &pred, &ts)?;
            if regime == Regime::Infinite {
                infinite_checks(run, &pred, &plan, &table, &curve, window, beta)?;
                small_b(run, &table, &sys, vbar * wbar)?;
            } else {
                boundary_checks(run, &pred, &curve)?;
            }
            for (k, &t) in mc_times.iter().enumerate() {
                let r = at_mc.points()[k];
                let z = (mc.estimates[k] - r.value).abs() / mc.stderr[k];
                run.check(
                    &format!("mc_agreement_t{t:.0}"),
                    "monte_carlo",
                    z,
                    None,
                    Some(3.0),
                    format!(
                        "renewal {:.6e} ± {:.1e}, mc {:.6e} ± {:.1e}, N = {}",
                        r.value, r.error, mc.estimates[k], mc.stderr[k], mc.samples
                    ),
                );
            }
        }
        MixKind::Finite => {
            let pred = op("asymptotics::predict", predict(&sys, vbar, wbar))?;
            write_prediction(run, &pred, &ts)?;
            finite_checks(run, &pred, &curve, window, beta, vbar * wbar)?;
            mc_values(run, &mc_times, &mc, &at_mc);
        }
        MixKind::ZeroMean => {
            let env = upper_envelope(&curve.values());
            let fit = op("asymptotics::fit_loglog", fit_loglog(&curve.times(), &env, None))?;
            // smallest C with |ρ(t)| <= C t^{-(β-0.1)} on the window
            let c = curve
                .points()
                .iter()
                .map(|p| p.value.abs() * p.t.powf(beta - 0.1))
                .fold(0.0, f64::max);
            run.value("bound_constant", "asymptotics", c);
            run.value("abs_vbar", "renewal", vbar.abs());
            run.check(
                "zero_mean_slope",
                "asymptotics",
                fit.exponent,
                None,
                Some(-(beta - 0.15)),
                format!("C = {c:.4e}"),
            );
            mc_values(run, &mc_times, &mc, &at_mc);
        }
    }
    Ok(())
}

fn mc_values(run: &mut Run, times: &[f64], mc: &crate::monte_carlo::McEstimate, at: &CorrelationCurve) {
    for (k, &t) in times.iter().enumerate() {
        let z = (mc.estimates[k] - at.points()[k].value) / mc.stderr[k];
        run.value(&format!("mc_z_t{t:.0}"), "monte_carlo", z);
    }
}

fn write_prediction(run: &mut Run, pred: &Prediction, ts: &[f64]) -> Result<()> {
    let mut points = Vec::with_capacity(ts.len());
    for &t in ts {
        points.push(CurvePoint {
            t,
            value: op("asymptotics::predict", pred.eval(t))?,
            error: 0.0,
        });
    }
    let curve = CorrelationCurve::new(Source::Prediction, points);
    write_curve(run, "prediction.csv", &curve)?;
    run.plot("prediction.csv", "t", &["rho"], true, true);
    Ok(())
}

fn infinite_checks(
    run: &mut Run,
    pred: &Prediction,
    plan: &crate::inversion::InversionPlan,
    table: &SampleTable,
    curve: &CorrelationCurve,
    window: (f64, f64),
    beta: f64,
) -> Result<()> {
    let fit = op("asymptotics::fit_powerlaw", fit_powerlaw(curve, window))?;
    let target = -(1.0 - beta);
    run.check(
        "mixing_slope",
        "asymptotics",
        fit.exponent,
        Some(target - 0.05),
        Some(target + 0.05),
        format!("±{:.3}", fit.exponent_stderr),
    );
    let at = op("laplace_inversion::invert", invert(plan, table, &[1e3, 1e4]))?;
    for p in at.points() {
        let ratio = p.value / op("asymptotics::predict", pred.eval(p.t))?;
        run.check(
            &format!("plateau_ratio_t{:.0}", p.t),
            "asymptotics",
            ratio,
            Some(0.85),
            Some(1.15),
            format!("ρ = {:.6e} ± {:.1e}", p.value, p.error),
        );
    }
    Ok(())
}

fn small_b(run: &mut Run, table: &SampleTable, sys: &InducedSystem, vw: f64) -> Result<()> {
    let beta = sys.beta();
    let prediction = Complex64::new(vw, 0.0) / c_beta_closed_form(beta)?;
    let rows = op(
        "laplace_inversion::small_b_limit_check",
        small_b_limit_check(table, beta, c0(sys), prediction),
    )?;
    run.csv("small_b.csv", |out| {
        writeln!(out, "b,scaled_re,scaled_im,deviation")?;
        for r in &rows {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e}",
                r.b, r.scaled.re, r.scaled.im, r.deviation
            )?;
        }
        Ok(())
    })?;
    run.value("small_b_deviation", "laplace_inversion", rows[0].deviation);
    Ok(())
}

fn boundary_checks(run: &mut Run, pred: &Prediction, curve: &CorrelationCurve) -> Result<()> {
    let last = curve
        .points()
        .last()
        .copied()
        .ok_or_else(|| Error::InvalidArgument("empty time grid".into()))?;
    let ratio = last.value / op("asymptotics::predict", pred.eval(last.t))?;
    run.check(
        &format!("log_plateau_ratio_t{:.0}", last.t),
        "asymptotics",
        ratio,
        Some(0.6),
        Some(1.4),
        format!("ρ = {:.6e} ± {:.1e}", last.value, last.error),
    );
    // ρ(t)·log t over the last decade, relative to the plateau v̄w̄/c₀
    let plateau = pred.vbar * pred.wbar / pred.constants[0].value;
    let tail: Vec<(f64, f64)> = curve
        .points()
        .iter()
        .filter(|p| p.t >= last.t / 10.0 * (1.0 - 1e-9))
        .map(|p| (p.value * p.t.ln() / plateau, p.error * p.t.ln() / plateau))
        .collect();
    let toward = (1.0 - tail[0].0).signum();
    let worst = tail
        .windows(2)
        .map(|w| toward * (w[1].0 - w[0].0) + w[0].1 + w[1].1)
        .fold(f64::INFINITY, f64::min);
    run.check(
        "log_trend_toward_plateau",
        "asymptotics",
        worst,
        Some(0.0),
        None,
        format!(
            "ρ·log t / plateau from {:.4} to {:.4}",
            tail[0].0,
            tail[tail.len() - 1].0
        ),
    );
    Ok(())
}

fn finite_checks(
    run: &mut Run,
    pred: &Prediction,
    curve: &CorrelationCurve,
    window: (f64, f64),
    beta: f64,
    vw: f64,
) -> Result<()> {
    let decay = curve.map(|_, v| v - vw);
    let fit = op("asymptotics::fit_powerlaw", fit_powerlaw(&decay, window))?;
    let target = -(beta - 1.0);
    run.check(
        "decay_slope",
        "asymptotics",
        fit.exponent,
        Some(target - 0.07),
        Some(target + 0.07),
        format!("±{:.3}", fit.exponent_stderr),
    );
    let mut worst: f64 = 0.0;
    let mut residual = Vec::with_capacity(decay.points().len());
    for p in decay.points() {
        let q = op("asymptotics::predict", pred.eval_decay(p.t))?;
        worst = worst.max((p.value / q - 1.0).abs());
        residual.push(CurvePoint {
            t: p.t,
            value: p.value - q,
            error: p.error,
        });
    }
    run.check(
        "decay_vs_gamma_max_rel",
        "asymptotics",
        worst,
        None,
        Some(0.2),
        String::new(),
    );
    let residual = CorrelationCurve::new(Source::Renewal, residual);
    write_curve(run, "residual.csv", &residual)?;
    run.plot("residual.csv", "t", &["rho"], true, true);
    let target = -(2.0 * beta - 2.0) + 0.1;
    // the remainder changes sign, so its upper envelope is fitted
    let inside: Vec<&CurvePoint> = residual
        .points()
        .iter()
        .filter(|p| p.t >= window.0 && p.t <= window.1)
        .collect();
    let t: Vec<f64> = inside.iter().map(|p| p.t).collect();
    let v: Vec<f64> = inside.iter().map(|p| p.value).collect();
    let flips = v.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let bar = inside.iter().map(|p| p.error).fold(0.0, f64::max);
    match fit_loglog(&t, &upper_envelope(&v), None) {
        Ok(r) => {
            run.check(
                "residual_slope",
                "asymptotics",
                r.exponent,
                None,
                Some(target),
                format!("envelope of |residual|, {flips} sign changes, max error bar {bar:.1e}"),
            );
        }
        Err(e) => run.push_check(
            "residual_slope",
            "asymptotics",
            f64::NAN,
            None,
            Some(target),
            false,
            e.to_string(),
        ),
    }
    Ok(())
}

fn probe(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let sys = load_system(cfg)?;
    let table = op(
        "transfer_ops::resolvent_norm_probe",
        resolvent_norm_probe(&sys, &cfg.panels.probe_b, cfg.mc.seed),
    )?;
    run.csv("resolvent_probe.csv", |out| table.write_csv(out))?;
    run.plot("resolvent_probe.csv", "b", &["norm"], true, true);
    if let Some(fit) = table.exponent {
        run.value("norm_growth_exponent", "transfer_ops", fit.exponent);
    }
    let singular = table.rows.iter().filter(|r| r.near_singular).count();
    run.check(
        "near_singular_rows",
        "transfer_ops",
        singular as f64,
        None,
        Some(0.0),
        String::new(),
    );
    Ok(())
}

/// Smooth random functions on `Y`: low-order trigonometric sums.
fn smooth_probes(sys: &InducedSystem, n: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            sys.grid()
                .nodes()
                .iter()
                .map(|&y| {
                    let x = 2.0 * std::f64::consts::PI * (2.0 * y - 1.0);
                    let v: f64 = (0..4)
                        .map(|k| c[2 * k] * (k as f64 * x).cos() + c[2 * k + 1] * (k as f64 * x).sin())
                        .sum();
                    Complex64::new(v, 0.0)
                })
                .collect()
        })
        .collect()
}

fn decompose(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let sys = load_system(cfg)?;
    let zero = Complex64::new(0.0, 0.0);
    let r0 = op("transfer_ops::assemble", assemble_twisted(&sys, zero))?;
    let ones = vec![Complex64::new(1.0, 0.0); sys.n_y()];
    let r1 = r0.apply(&ones).iter().map(|z| (z - 1.0).norm()).fold(0.0, f64::max);
    run.check("r_one_is_one", "transfer_ops", r1, None, Some(1e-8), String::new());
    let dual = smooth_probes(&sys, 5, cfg.mc.seed)
        .iter()
        .map(|g| (r0.mu_integral(&r0.apply(g)) - r0.mu_integral(g)).norm())
        .fold(0.0, f64::max);
    run.check(
        "duality",
        "transfer_ops",
        dual,
        None,
        Some(1e-8),
        "5 smooth probes".into(),
    );

    // the Û(0) mass identity compares the cubic fiber rule with Simpson, which needs N_u >= 256
    let ctx = op(
        "renewal::context",
        RenewalContext::new(&sys, cfg.discretization.n_u.max(256)),
    )?;
    let one = GridFunction::sample_tilde(ctx.grid_y(), ctx.grid_u(), |_, _| Complex64::new(1.0, 0.0));
    let u1 = op("renewal::u_hat", u_hat(&ctx, zero, &one))?;
    let dev = u1.values().iter().map(|z| (z - 1.0).norm()).fold(0.0, f64::max);
    run.check("u_hat_zero_one", "renewal", dev, None, Some(1e-8), String::new());
    let (v, w) = cfg.observables();
    let mut mass: f64 = 0.0;
    for obs in [v, w, v.derivative(1)] {
        let g = ctx.sample(&obs);
        let lhs = ctx.integrate(&op("renewal::u_hat", u_hat(&ctx, zero, &g))?)?;
        let rhs = ctx.integrate(&g)?;
        mass = mass.max((lhs - rhs).norm() / rhs.norm().max(1.0));
    }
    run.check(
        "u_hat_zero_mass",
        "renewal",
        mass,
        None,
        Some(1e-8),
        format!("N_u = {}", ctx.grid_u().intervals()),
    );
    let norms = op(
        "renewal::u_hat_norm_check",
        u_hat_norm_check(&ctx, &cfg.panels.u_norm_b, cfg.mc.seed),
    )?;
    run.csv("u_hat_norm.csv", |out| {
        writeln!(out, "b,l1_norm")?;
        for r in &norms {
            writeln!(out, "{:.17e},{:.17e}", r.b, r.value)?;
        }
        Ok(())
    })?;
    let worst = norms.iter().map(|r| r.value).fold(0.0, f64::max);
    run.check("u_hat_norm_max", "renewal", worst, None, Some(2.0), String::new());

    if cfg.regime() != Regime::Finite {
        return Ok(());
    }
    let k = cfg.panels.split_k;
    let gamma = op("asymptotics::gamma", sys.gamma(k))?;
    run.value("gamma_k", "asymptotics", gamma);
    let v0 = GridFunction::sample_y(sys.grid(), |y| Complex64::new(v.y_part(y), 0.0));
    let mut rows = Vec::new();
    for &[a, b] in &cfg.panels.split_panel {
        let s = Complex64::new(a, b);
        let d = op("renewal::decompose_t0", decompose_t0(&ctx, s, k, &v0))?;
        rows.push((s, d.relative_residual(), d.c0_integral, d.d_integral, d.contraction));
    }
    run.csv("decomposition.csv", |out| {
        writeln!(out, "s_re,s_im,relative_residual,c0_integral,d_re,d_im,contraction")?;
        for r in &rows {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.0.re, r.0.im, r.1, r.2, r.3.re, r.3.im, r.4
            )?;
        }
        Ok(())
    })?;
    let residual = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    run.check(
        "decomposition_residual",
        "renewal",
        residual,
        None,
        Some(1e-8),
        String::new(),
    );
    let scalar = rows.iter().map(|r| (r.2 - gamma).abs()).fold(0.0, f64::max);
    run.check(
        "c0_integral_vs_gamma",
        "renewal",
        scalar,
        None,
        Some(1e-6),
        format!("γ(k) = {gamma:.8}"),
    );
    let mut gaps = Vec::new();
    for &[a, b] in &cfg.panels.gap_panel {
        let s = Complex64::new(a, b);
        gaps.push((s, op("renewal::gap_integral", gap_integral(&sys, s, k))?.norm()));
    }
    let worst = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    let detail = gaps
        .iter()
        .map(|g| format!("{}: {:.4}", g.0, g.1))
        .collect::<Vec<_>>()
        .join(", ");
    run.check("d_bound_margin", "renewal", gamma - worst, Some(0.0), None, detail);
    Ok(())
}
