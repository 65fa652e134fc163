use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arcnp_cli::{describe, parse_overrides, run, CliError, Config, EXPERIMENTS};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arcnp", version, about = "Run conditional neural process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file (or a previous manifest.json).
    Run {
        config: PathBuf,
        /// Overrides as `--key value`, e.g. `--seed 3 --threads 4 --out dir`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Print the resolved plan and settings without running anything.
    Describe {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// List the available experiments.
    List,
}

fn load(config: &Path, overrides: &[String]) -> Result<Config, CliError> {
    Config::load(config, &parse_overrides(overrides)?)
}

fn main() -> ExitCode {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::List => {
            for e in EXPERIMENTS {
                println!("{e}");
            }
            Ok(())
        }
        Command::Describe { config, overrides } => load(&config, &overrides).map(|c| print!("{}", describe(&c))),
        Command::Run { config, overrides } => load(&config, &overrides).and_then(|c| {
            let outcome = run(&c)?;
            println!("{}", arcnp::eval::CSV_HEADER);
            for r in &outcome.reports {
                println!("{}", r.csv_row());
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::UnknownExperiment { .. }) {
                eprintln!("\nusage: arcnp run <config> [--key value ...]\nexperiments: {}", EXPERIMENTS.join(", "));
            }
            ExitCode::from(2)
        }
    }
}
