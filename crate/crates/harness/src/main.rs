use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use mces_harness::presets::{self, PRESETS};
use mces_harness::ExperimentConfig;

#[derive(Parser)]
#[command(name = "mces", about = "Run and compare exploring-starts policy search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials of one configuration.
    Run {
        /// TOML configuration file.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Named preset instead of a file.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair two run directories trial by trial.
    Compare { a: PathBuf, b: PathBuf },
    /// Named configurations.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset as TOML.
    Show { name: String },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, preset, seed, trials, threads, out } => {
            let mut cfg = match (config, preset) {
                (Some(path), None) => ExperimentConfig::from_toml(&fs::read_to_string(&path)?)?,
                (None, Some(name)) => match presets::find(&name) {
                    Some(c) => c,
                    None => bail!("unknown preset {name}; see `mces presets list`"),
                },
                _ => bail!("give either --config or --preset"),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            cfg.validate()?;
            if let Some(k) = cfg.k_cap {
                eprintln!("note: k_m capped at {k}; the PAC certificate does not hold for this run");
            }
            let summary = mces_harness::run(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Compare { a, b } => {
            let c = mces_harness::compare(&a, &b)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
        Command::Presets { action: PresetAction::List } => {
            for p in PRESETS {
                println!("{:<26} {}", p.name, p.about);
            }
        }
        Command::Presets { action: PresetAction::Show { name } } => match presets::find(&name) {
            Some(c) => print!("{}", c.to_toml()),
            None => bail!("unknown preset {name}"),
        },
    }
    Ok(())
}
