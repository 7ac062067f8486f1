//! Command-line entry point: `gen`, `run`, `conditions`, `variance`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use tdlab::harness::{cmd_conditions, cmd_gen, cmd_run, cmd_variance, parse_config, resolve_out_dir};

#[derive(Parser)]
#[command(name = "tdlab", about = "Variance-reduced off-policy TD learning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for repetition-level parallelism (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Base seed (overrides `base_seed` from the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured model + features and write them as JSON.
    Gen(Common),
    /// Run the algorithm grid and write traces, envelopes, and a manifest.
    Run(Common),
    /// Evaluate step-size conditions and write a JSON report.
    Conditions(Common),
    /// Estimate per-step update variance and write per-algorithm CSVs.
    Variance(Common),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(common) => {
            let config = parse_config(&common.config)?;
            let out = resolve_out_dir(&config, common.out.as_deref())?;
            let path = cmd_gen(&config, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Run(common) => {
            let config = parse_config(&common.config)?;
            let out = resolve_out_dir(&config, common.out.as_deref())?;
            cmd_run(&config, &out, common.threads, common.seed)?;
            println!("wrote run outputs to {}", out.display());
        }
        Command::Conditions(common) => {
            let config = parse_config(&common.config)?;
            let out = resolve_out_dir(&config, common.out.as_deref())?;
            let path = cmd_conditions(&config, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Variance(common) => {
            let config = parse_config(&common.config)?;
            let out = resolve_out_dir(&config, common.out.as_deref())?;
            cmd_variance(&config, &out, common.seed)?;
            println!("wrote variance outputs to {}", out.display());
        }
    }
    Ok(())
}
