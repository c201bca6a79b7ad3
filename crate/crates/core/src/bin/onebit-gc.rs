//! Command-line front end: `run`, `bounds` and `verify`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use onebit_gc::config::{BoundsConfig, ExperimentConfig};
use onebit_gc::experiment::{bounds_csv, bounds_table, run_experiment};
use onebit_gc::{verify, Error};

#[derive(Parser)]
#[command(name = "onebit-gc", version, about = "1-bit gradient coding simulator")]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate theoretical bounds for the constants in a config file.
    Bounds {
        config: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in numerical self-checks.
    Verify,
}

fn is_usage_error(e: &Error) -> bool {
    matches!(e, Error::Parse { .. } | Error::InvalidConfig { .. })
}

fn read_config(path: &PathBuf) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => {
            let text = match read_config(&config) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let mut cfg = match ExperimentConfig::parse(&text) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            let report = match run_experiment(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            if !cli.quiet {
                for r in &report.records {
                    let last = r.outcome.last();
                    println!(
                        "{} seed {}: {} iterations, {} bits, loss {:.6e}",
                        r.method, r.seed, last.t, last.cumulative_bits, last.loss
                    );
                }
                println!("wrote {}", report.output.display());
            }
            let diverged: Vec<_> = report.diverged().collect();
            for r in &diverged {
                eprintln!(
                    "warning: {} seed {} diverged at iteration {}",
                    r.method,
                    r.seed,
                    r.outcome.diverged_at.unwrap_or_default()
                );
            }
            if !diverged.is_empty() && !cfg.allow_divergence {
                eprintln!("error: divergent runs (set allow_divergence = true to accept)");
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Command::Bounds { config, out } => {
            let text = match read_config(&config) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let cfg = match BoundsConfig::parse(&text) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let csv = match bounds_table(&cfg) {
                Ok(rows) => bounds_csv(&rows),
                Err(e) => return fail(e),
            };
            match out.or(cfg.output) {
                Some(path) => {
                    if let Err(e) = fs::write(&path, csv) {
                        return fail(e.into());
                    }
                }
                None => print!("{csv}"),
            }
            ExitCode::SUCCESS
        }
        Command::Verify => {
            let checks = match verify::run_all() {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let mut ok = true;
            for c in &checks {
                ok &= c.passed;
                if !cli.quiet || !c.passed {
                    println!("{c}");
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
