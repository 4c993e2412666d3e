use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lsv_renewal::config::{ExperimentConfig, Resolution};
use lsv_renewal::harness::{run, Subcommand};

fn subcommand(name: &str) -> Result<Subcommand, String> {
    Subcommand::parse(name).map_err(|_| {
        let names: Vec<_> = Subcommand::ALL.iter().map(|s| s.name()).collect();
        format!("expected one of: {}", names.join(", "))
    })
}

fn resolution(name: &str) -> Result<Resolution, String> {
    Resolution::parse(name).map_err(|e| e.to_string())
}

/// Renewal-operator experiments for LSV suspension flows.
#[derive(Parser, Debug)]
#[command(name = "lsvlab", version)]
struct Cli {
    /// tails, spectrum, rho-hat, mix-infinite, mix-finite, mix-zero-mean, probe-resolvent, decompose
    #[arg(value_parser = subcommand)]
    subcommand: Subcommand,
    /// TOML experiment config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// ref, 2x or 4x
    #[arg(long, value_parser = resolution, default_value = "ref")]
    resolution: Resolution,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => ExperimentConfig::for_alpha(1.5),
    };
    let mut cfg = match cfg {
        Ok(c) => c.with_resolution(cli.resolution),
        Err(e) => {
            eprintln!("lsvlab: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    cfg.out_dir = out.clone();
    match run(cli.subcommand, &cfg, &out) {
        Ok(summary) => {
            print!("{}", summary.report());
            println!(
                "{} {}: {}",
                summary.subcommand,
                &summary.config_hash[..12],
                if summary.passed {
                    "all checks passed"
                } else {
                    "checks failed"
                }
            );
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("lsvlab {}: {e}", cli.subcommand.name());
            ExitCode::from(3)
        }
    }
}
