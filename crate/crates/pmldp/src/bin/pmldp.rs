use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmldp::cli::{describe, run, RunOptions};

/// Numerical laboratory for small-noise and short-time large deviations of
/// stochastic porous media dynamics on a 1-D grid.
#[derive(Parser)]
#[command(name = "pmldp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment described by a config file and write its CSV.
    Run {
        /// Path to the TOML experiment config.
        config: PathBuf,
        /// Override a config key, e.g. --set experiment.delta=0.2
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Worker threads for path-parallel sections (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print resolved parameters, gate status and a cost estimate.
    Describe {
        /// Path to the TOML experiment config.
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            set,
            workers,
            seed,
            out,
        } => run(
            &config,
            &RunOptions {
                sets: set,
                workers,
                seed,
                out,
            },
        ),
        Command::Describe { config, set } => match describe(&config, &set) {
            Ok(text) => {
                print!("{text}");
                Ok(())
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pmldp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
