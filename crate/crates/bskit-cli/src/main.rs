use std::path::PathBuf;
use std::process::ExitCode;

use bskit_cli::{ExperimentConfig, RunOptions, Subcommand, run};
use clap::Parser;

/// Coherent-state quantization experiments.
#[derive(Parser)]
#[command(name = "bskit", version)]
struct Args {
    #[arg(value_enum)]
    subcommand: Subcommand,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("bskit: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions { out: args.out, seed: args.seed };
    match run(args.subcommand, &cfg, &opts) {
        Ok(report) => {
            for c in &report.checks {
                let rel = if c.relation == "le" { "<=" } else { ">=" };
                println!("{} {}: {:.6e} {rel} {:.6e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }
        Err(e) => {
            eprintln!("bskit: {e}");
            ExitCode::from(2)
        }
    }
}
