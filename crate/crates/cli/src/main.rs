//! Command-line front end for the secrecy-rate simulator.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use secrecy_core::harness::{
    emit_results, run_experiment, run_init_study, write_init_rows, ExperimentConfig, ExperimentResult, HarnessError,
    Strategy, Sweep,
};
use secrecy_core::waterfill::{default_eps0, secrecy_per_subcarrier, waterfill, SubcarrierGains};

#[derive(Debug, Parser)]
#[command(
    name = "secrecy",
    version,
    about = "Sum secrecy rate optimization for a multi-carrier wiretap link with a full-duplex jamming receiver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs the experiment described by a TOML config
    Run {
        config: PathBuf,
        /// Output directory for aggregate.csv, trials.csv and metadata.toml
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Runs an experiment sweeping one parameter given on the command line
    Sweep(SweepArgs),
    /// Optimal power allocation for given per-subcarrier gains
    Waterfill(WaterfillArgs),
    /// Compares BCD initializations over a config's sweep
    BenchInit {
        config: PathBuf,
        /// Output CSV file
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Base config; the built-in desk setup is used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter to sweep, e.g. w_max_db or kappa_beta_db
    #[arg(long)]
    param: String,
    /// Comma-separated sweep values (`-inf` is accepted)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    values: Vec<f64>,
    /// Strategies, overriding the config (comma-separated)
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WaterfillArgs {
    /// Comma-separated legitimate gains
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    /// Comma-separated eavesdropper gains
    #[arg(long, value_delimiter = ',', required = true)]
    beta: Vec<f64>,
    /// Total power budget (linear)
    #[arg(long)]
    budget: f64,
    /// Bisection exit tolerance; defaults to 1e-8 times the budget
    #[arg(long)]
    eps0: Option<f64>,
    /// Output CSV file; standard output when omitted
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Invalid command-line input; exits with code 2.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(h) = e.downcast_ref::<HarnessError>() {
        return h.exit_code() as u8;
    }
    if e.downcast_ref::<InputError>().is_some() {
        return 2;
    }
    3
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            experiment(&cfg, &out)
        }
        Command::Sweep(args) => {
            let mut cfg = match &args.config {
                Some(path) => ExperimentConfig::from_path(path)?,
                None => ExperimentConfig::desk(1, 20, &[Strategy::OptimalFd, Strategy::OptimalHd]),
            };
            if !args.strategies.is_empty() {
                cfg.strategies = args.strategies.clone();
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(trials) = args.trials {
                cfg.trials = trials;
            }
            cfg.sweep = Some(Sweep { param: args.param.clone(), values: args.values.clone() });
            cfg.validate()?;
            experiment(&cfg, &args.out)
        }
        Command::Waterfill(args) => allocate(&args).map(|_| ExitCode::SUCCESS),
        Command::BenchInit { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let rows = run_init_study(&cfg)?;
            write_init_rows(&rows, &out)?;
            for r in &rows {
                println!(
                    "{:>13} {:>8} {:8.4} bits (se {:.4}, gap {:+.2}%)",
                    r.mode,
                    r.sweep_value,
                    r.mean_bits,
                    r.stderr_bits,
                    100.0 * r.relative_gap
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn experiment(cfg: &ExperimentConfig, out: &std::path::Path) -> Result<ExitCode> {
    let res = run_experiment(cfg)?;
    emit_results(&res, out)?;
    summarize(&res);
    if res.metadata.failed_trials > 0 {
        eprintln!("{} trial(s) failed; see {}", res.metadata.failed_trials, out.join("trials.csv").display());
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(res: &ExperimentResult) {
    for r in &res.aggregates {
        println!(
            "{:<18} {}={:<6} {:8.4} bits (se {:.4}, {:.1} iters)",
            r.strategy, r.sweep_param, r.sweep_value, r.mean_bits, r.stderr_bits, r.mean_iters
        );
    }
}

fn allocate(args: &WaterfillArgs) -> Result<()> {
    let gains = SubcarrierGains::new(args.alpha.clone(), args.beta.clone(), args.budget)
        .map_err(|e| InputError(e.to_string()))?;
    let eps0 = args.eps0.unwrap_or_else(|| default_eps0(args.budget));
    if eps0.is_nan() || eps0 <= 0.0 {
        bail!(InputError(format!("eps0 must be positive, got {eps0}")));
    }
    let alloc = waterfill(&gains, eps0);

    let mut text = String::from("subcarrier,alpha,beta,power,rate_nats\n");
    for (n, &x) in alloc.power.iter().enumerate() {
        let (a, b) = (gains.alpha[n], gains.beta[n]);
        text.push_str(&format!("{n},{a},{b},{x},{}\n", secrecy_per_subcarrier(x, a, b)));
    }
    match &args.out {
        Some(path) => fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    eprintln!(
        "lambda {:.6e} (lower bound {:.6e}), objective {:.6} nats, {} bisection steps",
        alloc.lambda, alloc.lambda_max, alloc.objective, alloc.iterations
    );
    Ok(())
}
