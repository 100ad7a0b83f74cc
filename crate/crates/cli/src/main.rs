use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcap_cli::{run, Command, Overrides, Property};

#[derive(Parser)]
#[command(name = "pcap", version, about = "Relative p-capacities on uniform grids")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Capacity and extremal of every configured set.
    Capacity(Common),
    /// Potential and energy of the configured measure.
    Potential(Common),
    /// Capacitary measure of every configured set.
    Measure(Common),
    /// Run one property check.
    Check {
        #[arg(value_enum)]
        property: Property,
        #[command(flatten)]
        common: Common,
    },
    /// Capacity of one set under grid refinement.
    Refine(Common),
    /// Write a field as CSV and JSON.
    Emit(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Capacity(c) => (Command::Capacity, c),
        Sub::Potential(c) => (Command::Potential, c),
        Sub::Measure(c) => (Command::Measure, c),
        Sub::Check { property, common } => (Command::Check(property), common),
        Sub::Refine(c) => (Command::Refine, c),
        Sub::Emit(c) => (Command::Emit, c),
    };
    let overrides = Overrides { seed: common.seed, out: common.out, jobs: common.jobs };
    match run(command, &common.config, &overrides) {
        Ok(summary) => {
            for m in &summary.messages {
                eprintln!("{m}");
            }
            println!(
                "{} artifacts, manifest {}",
                summary.manifest.artifacts.len(),
                summary.manifest_path.display()
            );
            ExitCode::from(summary.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
