mod compare;
mod config;
mod experiment;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::load_config;

#[derive(Parser)]
#[command(
    name = "poolopt",
    version,
    about = "Find the cheapest serving pool that meets a latency target"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Output directory; overrides the config and $POOLOPT_OUTPUT_DIR.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Set a config field, e.g. `--set workload.arrival_rate=400`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured search on every seed.
    Run(RunArgs),
    /// Evaluate the full grid on every seed and record the true optimum.
    Oracle(RunArgs),
    /// Tabulate several finished runs on the same fixture as CSV.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let loaded = load_config(&args.config, &args.overrides, args.seeds.as_deref())?;
            let out = loaded.output_dir(args.output.as_deref());
            let summary = experiment::run_experiment(&loaded, &args.config, &out)?;
            for r in &summary.runs {
                let to_opt = r
                    .samples_to_optimum
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "-".into());
                eprintln!(
                    "seed {}: best {} cost {:.3} r_sat {:.4} samples {} to_optimum {}",
                    r.seed, r.best_config, r.best_cost, r.best_r_sat, r.samples_used, to_opt
                );
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Oracle(args) => {
            let loaded = load_config(&args.config, &args.overrides, args.seeds.as_deref())?;
            let out = loaded.output_dir(args.output.as_deref());
            for r in experiment::run_oracle(&loaded, &args.config, &out)? {
                eprintln!(
                    "seed {}: optimum {} cost {}",
                    r.seed,
                    r.optimum_config.as_deref().unwrap_or("none"),
                    r.optimum_cost.map(|c| format!("{c:.3}")).unwrap_or_else(|| "-".into())
                );
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Compare { runs, output } => match output {
            Some(path) => {
                let file = std::fs::File::create(&path)?;
                compare::compare(&runs, file)?;
            }
            None => {
                compare::compare(&runs, std::io::stdout().lock())?;
            }
        },
    }
    Ok(())
}
