//! `margp`: fit, simulate, evaluate and diagnose marginally constrained
//! nonparametric density models from a JSON run configuration.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use margp::config::Recipe;
use margp::run::{self, Overrides};
use margp::RunConfig;

#[derive(Parser)]
#[command(name = "margp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's MCMC iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an exact prior/predictive sample from the configured model.
    Simulate(CommonArgs),
    /// Run the data-augmentation Gibbs sampler on the configured dataset.
    Fit(CommonArgs),
    /// Compute density surfaces and held-out log-likelihoods from a fit.
    Evaluate(CommonArgs),
    /// Effective sample sizes and traceplot data from a fit.
    Diagnose(CommonArgs),
    /// Split the dataset into train/test files.
    Split(CommonArgs),
    /// Materialize a bundled experiment recipe (config plus synthetic data).
    Recipe {
        /// One of: synthetic1, synthetic2, pm25, earthquake.
        name: String,
        /// Directory to write the recipe into.
        #[arg(long, default_value = "recipe")]
        out: PathBuf,
        /// Training-set size for the synthetic recipes.
        #[arg(long)]
        n: Option<usize>,
        /// Seed for generated data and the emitted config.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(args: &CommonArgs) -> margp::Result<(RunConfig, Overrides)> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        margp::Error::Config(format!("cannot read {}: {}", args.config.display(), e))
    })?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(out) = &args.out {
        cfg.output = out.to_string_lossy().into_owned();
    }
    let over = Overrides { seed: args.seed, iterations: args.iterations };
    Ok((cfg, over))
}

fn dispatch(cli: Cli) -> margp::Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let (cfg, over) = load_config(&args)?;
            let dir = run::simulate_cmd(cfg, &over)?;
            println!("simulate: wrote {}", dir.display());
        }
        Command::Fit(args) => {
            let (cfg, over) = load_config(&args)?;
            let dir = run::fit(cfg, &over)?;
            println!("fit: wrote {}", dir.display());
        }
        Command::Evaluate(args) => {
            let (cfg, over) = load_config(&args)?;
            let dir = run::evaluate(cfg, &over)?;
            println!("evaluate: wrote {}", dir.display());
        }
        Command::Diagnose(args) => {
            let (cfg, over) = load_config(&args)?;
            let dir = run::diagnose(cfg, &over)?;
            println!("diagnose: wrote {}", dir.display());
        }
        Command::Split(args) => {
            let (cfg, over) = load_config(&args)?;
            let dir = run::split_cmd(cfg, &over)?;
            println!("split: wrote {}", dir.display());
        }
        Command::Recipe { name, out, n, seed } => {
            let recipe: Recipe = name.parse()?;
            run::recipe_cmd(recipe, &out, n, seed)?;
            println!("recipe {}: wrote {}", name, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
