//! `dynpop`: train, evaluate and compare referential-game agents.
//!
//! Exit status is 0 on success, 2 for usage, configuration or input
//! errors, 3 when training aborts on a non-finite value.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dynpop::train::{Ablation, Method, TrainConfig};

mod common;
mod crossplay;
mod eval;
mod report;
mod train;

use common::{CliError, CliResult, OUT_ENV};

#[derive(Parser)]
#[command(name = "dynpop", version, about = "Dynamic population meta-learning for referential games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run directory per seed.
    Train {
        /// TOML configuration; the desk defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run seed; repeat for several runs.
        #[arg(long)]
        seed: Vec<u64>,
        /// Override one key, e.g. `--set schedule.max_outer=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "ours")]
        method: Method,
        #[arg(long)]
        ablation: Option<Ablation>,
        /// Output root; defaults to $DYNPOP_OUT, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the per-iteration checkpoints.
        #[arg(long)]
        no_checkpoints: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Evaluate trained pairs with one suite.
    Eval {
        #[arg(long, value_enum)]
        suite: eval::Suite,
        /// Run directories.
        runs: Vec<PathBuf>,
        /// Speaker checkpoint, instead of a run directory.
        #[arg(long, requires = "listener")]
        speaker: Option<PathBuf>,
        #[arg(long, requires = "speaker")]
        listener: Option<PathBuf>,
        /// Configuration describing the world of loose checkpoints.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: eval::Split,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        /// Episode seed; defaults to each run's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory (must not exist or be empty).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Play every run's final speaker with every run's final listener.
    Crossplay {
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare methods across runs: mean ± std test accuracy, best first.
    Report {
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a configuration file, or the list of valid keys.
    Config {
        /// Start from the large-scale values instead of the desk defaults.
        #[arg(long)]
        full_scale: bool,
        #[arg(long)]
        keys: bool,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            overrides,
            method,
            ablation,
            out,
            no_checkpoints,
            quiet,
        } => {
            for dir in train::train(train::TrainArgs {
                config,
                seeds: seed,
                overrides,
                method,
                ablation,
                out,
                checkpoints: !no_checkpoints,
                quiet,
            })? {
                println!("{}", dir.display());
            }
        }
        Command::Eval {
            suite,
            runs,
            speaker,
            listener,
            config,
            overrides,
            split,
            episodes,
            seed,
            out,
        } => {
            let dir = eval::eval(eval::EvalArgs {
                suite,
                runs,
                speaker,
                listener,
                config,
                overrides,
                split,
                episodes,
                seed,
                out,
            })?;
            println!("{}", dir.display());
        }
        Command::Crossplay {
            runs,
            episodes,
            seed,
            out,
        } => {
            let dir = crossplay::run_crossplay(crossplay::CrossplayArgs {
                runs,
                episodes,
                seed,
                out,
            })?;
            println!("{}", dir.display());
        }
        Command::Report { runs, episodes, out } => {
            let dir = report::report(report::ReportArgs { runs, episodes, out })?;
            println!("{}", dir.display());
        }
        Command::Config { full_scale, keys } => {
            if keys {
                for k in TrainConfig::keys() {
                    println!("{k}");
                }
            } else {
                let c = if full_scale { TrainConfig::full_scale() } else { TrainConfig::desk() };
                print!("{}", c.to_toml().map_err(CliError::Core)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == common::EXIT_USAGE {
                eprintln!("(default output root is ${OUT_ENV} or ./runs)");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
