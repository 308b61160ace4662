use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plural::cli::{self, CliError, CompareArgs, RunArgs, ScoreArgs};

#[derive(Parser)]
#[command(name = "plural", version, about = "Bridging-based ranking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and export metrics, feeds, ledger, fabric and score cards.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<u32>,
    },
    /// Score a reactions log against a fabric.
    Score {
        #[arg(long)]
        reactions: PathBuf,
        #[arg(long)]
        fabric: PathBuf,
        #[arg(long, default_value = "gac_penrose")]
        backend: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired-seed comparison against the baseline arm.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    cli::configure_threads()?;
    match command {
        Command::Run {
            scenario,
            out,
            seed,
            rounds,
        } => cli::cmd_run(&RunArgs {
            scenario,
            out,
            seed,
            rounds,
        }),
        Command::Score {
            reactions,
            fabric,
            backend,
            out,
        } => cli::cmd_score(&ScoreArgs {
            reactions,
            fabric,
            backend,
            out,
        }),
        Command::Compare { scenario, seeds, out } => cli::cmd_compare(&CompareArgs { scenario, seeds, out }),
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match dispatch(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("plural: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
