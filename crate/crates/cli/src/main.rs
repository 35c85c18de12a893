//! `recant`: run spatial-modulation experiments described by a TOML config.
//!
//! Exit status: 0 on success, 1 on a configuration or evaluation error,
//! 2 on a usage error, 3 when `validate` finishes but a check fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recant_sm::config::parse_config;
use recant_sm::experiment::{run, Command, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "recant", version, about = "Spatial modulation with reconfigurable antennas: simulation, bounds and codebook design")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Monte Carlo BER sweep, written to ber.csv.
    Simulate(Common),
    /// Analytical union bounds, written to bounds.csv.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Also write the per-pair APEP table to pairs.csv.
        #[arg(long)]
        pairs: bool,
    },
    /// Rank every codebook drawn from the pattern pool, written to ranking.csv.
    Optimize(Common),
    /// Simulation against the bounds, written to validate.csv and checks.csv.
    Validate(Common),
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 or unset uses every core.
    #[arg(long, env = "RECANT_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, opts) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c, RunOptions::default()),
        Cmd::Analyze { common, pairs } => (Command::Analyze, common, RunOptions { pair_dump: pairs }),
        Cmd::Optimize(c) => (Command::Optimize, c, RunOptions::default()),
        Cmd::Validate(c) => (Command::Validate, c, RunOptions::default()),
    };
    if let Some(n) = common.threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let mut cfg = match parse_config(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    match run(command, &cfg, &common.out, opts) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            let failed: Vec<_> = report.checks.iter().filter(|c| !c.pass).collect();
            if !report.checks.is_empty() {
                println!("{} of {} checks passed", report.checks.len() - failed.len(), report.checks.len());
            }
            for c in &failed {
                eprintln!("check failed: {} at {} dB: {} > {}", c.name, c.snr_db, c.value, c.limit);
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {command}: {e}");
            ExitCode::from(1)
        }
    }
}
