use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgecache::cli::{self, Overrides};

#[derive(Parser)]
#[command(name = "edgecache", version, about = "Edge cache simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the policy × q × seed grid and write simulate.csv.
    Simulate(Common),
    /// Enumerate configuration chains and write analyze.csv.
    Analyze(Common),
    /// Compute the greedy allocation and write greedy.csv.
    Greedy(Common),
    /// Run the built-in invariant suite.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Flags {
    /// Output directory (default: $EDGECACHE_OUT or ./edgecache-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the configured seed list with this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Measured requests between snapshots.
    #[arg(long)]
    snapshot_every: Option<u64>,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Flags,
}

impl From<Flags> for Overrides {
    fn from(f: Flags) -> Self {
        Overrides {
            out: f.out,
            seed: f.seed,
            jobs: f.jobs,
            snapshot_every: f.snapshot_every,
        }
    }
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Simulate(c) => cli::cmd_simulate(&c.config, &c.flags.into()).map(|_| true),
        Command::Analyze(c) => cli::cmd_analyze(&c.config, &c.flags.into()).map(|_| true),
        Command::Greedy(c) => cli::cmd_greedy(&c.config, &c.flags.into()).map(|_| true),
        Command::Validate(v) => cli::cmd_validate(v.config.as_deref(), &v.flags.into()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
