mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flss_core::Error;

use commands::{Context, Outcome};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "flss", version, about = "Spectral density, CLT and two-sample tests for Fisher matrices")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pin every tunable to the reference example values.
    #[arg(long, global = true)]
    paper_defaults: bool,
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Limiting spectral density on a mesh over the support.
    Density,
    /// Asymptotic mean and covariance of linear spectral statistics.
    Clt,
    /// Likelihood-ratio test of equal covariance matrices.
    Test,
    /// Asymptotic power at an alternative spectrum.
    Power,
    /// Grid-scan confidence interval for a spectrum family parameter.
    Ci,
    /// Monte Carlo replications, or a size/power experiment.
    Simulate,
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.paper_defaults {
        config.apply_reference_defaults();
    }
    if let (Some(seed), Some(sim)) = (cli.seed, config.simulate.as_mut()) {
        sim.spec.seed = seed;
        if let Some(alt) = sim.alternative.as_mut() {
            alt.seed = seed.wrapping_add(1);
        }
    }
    std::fs::create_dir_all(&cli.output_dir)
        .map_err(|source| Error::Io { path: cli.output_dir.display().to_string(), source })?;
    let ctx = Context { config, base: commands::base_dir(cli.config.as_deref()), out: cli.output_dir.clone() };
    match cli.command {
        Command::Density => commands::density(&ctx),
        Command::Clt => commands::clt(&ctx),
        Command::Test => commands::test(&ctx),
        Command::Power => commands::power(&ctx),
        Command::Ci => commands::ci(&ctx),
        Command::Simulate => commands::simulate(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::EmptyInterval) => {
            eprintln!("no grid point was accepted; the interval is empty");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 1 })
        }
    }
}
