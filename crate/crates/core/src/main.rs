use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmcmc_lab::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use pmcmc_lab::Error;

#[derive(Parser)]
#[command(name = "pmcmc-lab", version, about = "Particle MCMC kernels and exact oracles for their convergence constants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, then `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run i-cSMC, i-SIR, PIMH or PMMH chains (config `kind`, default icsmc).
    Simulate(Common),
    /// Enumerate the i-cSMC kernel and write its matrix, TV curves and spectrum.
    Oracle(Common),
    /// Tabulate the bounded-potential minorization constant over the N sweep.
    Bounds(Common),
    /// Evaluate the Gibbs versus particle Gibbs inequalities on a joint model.
    Pgibbs(Common),
    /// Sticky-set diagnostics on the unbounded-potential example.
    Sticky(Common),
}

fn run(cli: Cli) -> Result<Vec<String>, Error> {
    let (common, forced) = match cli.command {
        Command::Simulate(c) => (c, None),
        Command::Oracle(c) => (c, Some(ExperimentKind::Oracle)),
        Command::Bounds(c) => (c, Some(ExperimentKind::Bounds)),
        Command::Pgibbs(c) => (c, Some(ExperimentKind::Pgibbs)),
        Command::Sticky(c) => (c, Some(ExperimentKind::Sticky)),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.kind = match (forced, cfg.kind) {
        (Some(k), _) => Some(k),
        (None, None) => Some(ExperimentKind::Icsmc),
        (None, Some(k)) if k.is_simulation() => Some(k),
        (None, Some(k)) => return Err(Error::ConfigParse(format!("kind {k:?} is not a simulation; use its own subcommand"))),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = common.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let summary = run_experiment(&cfg, &out)?;
    for f in &summary.files {
        println!("{}", summary.output_dir.join(f).display());
    }
    Ok(summary.failed_checks)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
        Ok(failed) => {
            for f in failed {
                eprintln!("assertion failed: {f}");
            }
            ExitCode::from(2)
        }
        Err(e @ Error::AssertionFailure { .. }) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
