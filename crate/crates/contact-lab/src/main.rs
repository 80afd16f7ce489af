use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use contact_lab::cli::{run_file, Command, Overrides};

#[derive(Parser)]
#[command(
    name = "contact-lab",
    version,
    about = "Contact-process simulation and exact-verification laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (execution knob only; never affects results).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Commands {
    /// Independent trajectory replicas; writes trajectory summaries.
    Simulate(RunArgs),
    /// Coupled pair plus dominating process; writes domination paths.
    Couple(RunArgs),
    /// Exact-oracle residual suites; nonzero exit on tolerance failure.
    ExactCheck(RunArgs),
    /// Mean infected count over a grid with tail fit and time integral.
    Curve(RunArgs),
    /// Pseudo-critical value on one graph.
    Critical(RunArgs),
    /// Paired pseudo-critical comparison between a graph and its perturbation.
    Compare(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, command) = match &cli.command {
        Commands::Simulate(a) => (a, Command::Simulate),
        Commands::Couple(a) => (a, Command::Couple),
        Commands::ExactCheck(a) => (a, Command::ExactCheck),
        Commands::Curve(a) => (a, Command::Curve),
        Commands::Critical(a) => (a, Command::Critical),
        Commands::Compare(a) => (a, Command::Compare),
    };
    let overrides = Overrides {
        seed: args.seed,
        workers: args.workers,
        out_dir: args.out.clone(),
    };
    match run_file(&args.config, command, &overrides) {
        Ok(outcome) => {
            for line in &outcome.report_lines {
                println!("{line}");
            }
            println!(
                "artifacts in {}: {}",
                outcome.out_dir.display(),
                outcome.artifacts.join(", ")
            );
            if outcome.exit_code == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
