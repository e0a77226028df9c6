use std::path::PathBuf;
use std::process::ExitCode;

use bilateral_trade::harness::{self, run_experiment, sweep, write_run, ExperimentConfig, HarnessError, VerifyKind};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bilateral-trade", version, about = "Online bilateral trade experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One seeded run: writes trace.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replicated runs over several horizons with a log-log slope fit.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in verification suite.
    Verify {
        #[arg(value_parser = parse_suite)]
        suite: VerifyKind,
    },
}

fn parse_suite(s: &str) -> Result<VerifyKind, String> {
    s.parse()
}

fn execute(cmd: Command) -> Result<bool, HarnessError> {
    match cmd {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg = cfg.with_run(cfg.horizon, seed);
            }
            let dir = out.unwrap_or_else(|| cfg.out.clone());
            let output = run_experiment(&cfg)?;
            for w in &output.summary.warnings {
                eprintln!("warning: {w}");
            }
            write_run(&dir, &output)?;
            let s = &output.summary;
            println!(
                "{} T={} seed={} P={:.6} regret={:.6e} profit={:.6e} clamps={} fallbacks={} trace={} ({} rows)",
                s.algorithm,
                s.horizon,
                s.seed,
                s.price_bound,
                s.final_regret,
                s.final_profit,
                s.clamps,
                s.fallbacks,
                dir.join("trace.csv").display(),
                s.trace_rows
            );
            Ok(true)
        }
        Command::Sweep { config, horizons, reps, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.out.clone());
            let reps = reps.unwrap_or(cfg.reps);
            eprintln!("sweep: {} horizons x {reps} reps on {} workers", horizons.len(), harness::worker_count());
            let summary = sweep(&cfg, &horizons, reps, Some(&dir))?;
            for p in &summary.points {
                println!("T={} mean_regret={:.6e} std={:.6e} regret/T={:.6e}", p.horizon, p.mean_regret, p.std_regret, p.mean_regret_per_round);
            }
            println!("slope={:.4} residual={:.4e} ({})", summary.slope, summary.residual, dir.join("sweep.json").display());
            Ok(true)
        }
        Command::Verify { suite } => {
            let checks = suite.run()?;
            for c in &checks {
                println!("{c}");
            }
            Ok(checks.iter().all(|c| c.pass))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
