//! Command line driver: run configured convergence experiments or the
//! built-in verification suites.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tracefem_cli::{config, experiment, verify};

#[derive(Parser)]
#[command(
    name = "tracefem",
    about = "Space-time trace FEM experiments on evolving curves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to a flat `key = value` config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for assembly (default from the config).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a verification suite.
    Verify {
        /// Which suite: `invariants` or `oracles`.
        #[arg(long)]
        suite: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
        } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read {config:?}: {e}");
                    return ExitCode::from(2);
                }
            };
            let base = config.parent().unwrap_or(std::path::Path::new("."));
            let mut cfg = match config::parse(&text, base) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(out) = out {
                cfg.out = out;
            }
            if let Some(threads) = threads {
                cfg.threads = threads;
            }
            if cfg.threads > 0 {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build_global()
                {
                    log::warn!("thread pool already initialized: {e}");
                }
            }
            match experiment::run_experiment(&cfg) {
                Ok(outcome) => {
                    println!("csv: {}", outcome.csv_path.display());
                    if outcome.failures.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        for (ls, lq, msg) in &outcome.failures {
                            eprintln!("level (l_s = {ls}, l_q = {lq}) failed: {msg}");
                        }
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Verify { suite } => {
            let checks = match suite.as_str() {
                "invariants" => verify::invariants(),
                "oracles" => verify::oracles(),
                other => {
                    eprintln!("unknown suite '{other}' (expected 'invariants' or 'oracles')");
                    return ExitCode::from(2);
                }
            };
            let failures = verify::run_suite(&checks);
            if failures == 0 {
                ExitCode::SUCCESS
            } else {
                eprintln!("{failures} check(s) failed");
                ExitCode::FAILURE
            }
        }
    }
}
