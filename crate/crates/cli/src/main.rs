use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use dpopt_cli::checks::run_checks;
use dpopt_cli::config::ExperimentConfig;
use dpopt_cli::presets::{preset_text, PRESETS};
use dpopt_cli::runner::{execute, mean_by_n, slope_with_ci};
use dpopt_core::error::CoreError;

#[derive(Parser)]
#[command(name = "dpopt", version, about = "Benchmark harness for differentially private stochastic optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write a rate-curve CSV plus a ledger audit
    Run(RunArgs),
    /// Run one experiment, then fit log-log rates per metric
    Sweep(RunArgs),
    /// Execute the invariant suite and print a pass/fail table
    Check(CheckArgs),
    /// List the built-in presets
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Path to a TOML experiment config
    #[arg(long, value_name = "PATH", conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name instead of a config file (see `dpopt presets`)
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Replace the master seed from the config
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Replace the CSV path from the config; the audit lands next to it
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Replace the per-grid-point trial count from the config
    #[arg(long, value_name = "K")]
    trials: Option<usize>,
    /// Worker threads; trials run concurrently, outputs do not change
    #[arg(long, value_name = "N", default_value_t = 1)]
    threads: usize,
    /// Suppress progress messages
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Run only checks whose name contains this substring
    #[arg(long, value_name = "SUBSTRING")]
    filter: Option<String>,
    /// Corrupt one schedule constant to exercise the pin comparison
    #[arg(long, hide = true)]
    inject_schedule_error: bool,
    /// Print failures only
    #[arg(long)]
    quiet: bool,
}

/// Exit codes: 0 success, 1 config or invariant failure, 2 privacy budget
/// exhausted.
enum Failure {
    Config(String),
    Budget(String),
}

fn from_core(err: CoreError) -> Failure {
    match err {
        CoreError::BudgetExhausted { .. } => Failure::Budget(err.to_string()),
        other => Failure::Config(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap reserves 2 for usage errors; this binary reserves 2 for
            // budget exhaustion, so usage errors map to 1.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::Check(args) => check(args),
        Command::Presets => {
            for preset in &PRESETS {
                println!("{:<22} {}", preset.name, preset.summary);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Budget(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn audit_path_for(out: &Path) -> PathBuf {
    let text = out.to_string_lossy();
    match text.strip_suffix(".csv") {
        Some(stem) => PathBuf::from(format!("{stem}.audit.json")),
        None => PathBuf::from(format!("{text}.audit.json")),
    }
}

fn run(args: RunArgs, sweep: bool) -> Result<(), Failure> {
    let text = match (&args.config, &args.preset) {
        (Some(path), None) => fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?,
        (None, Some(name)) => preset_text(name).map_err(from_core)?.to_string(),
        _ => unreachable!("clap enforces exactly one config source"),
    };
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(from_core)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    let rc = cfg.resolve().map_err(from_core)?;

    let artifacts = execute(&rc, args.threads).map_err(from_core)?;

    let csv_path = args.out.clone().unwrap_or_else(|| PathBuf::from(&rc.csv_path));
    let audit_path = match &args.out {
        Some(out) => audit_path_for(out),
        None => PathBuf::from(&rc.audit_path),
    };
    fs::write(&csv_path, artifacts.csv_body())
        .map_err(|e| Failure::Config(format!("cannot write {}: {e}", csv_path.display())))?;
    fs::write(&audit_path, artifacts.audit_body())
        .map_err(|e| Failure::Config(format!("cannot write {}: {e}", audit_path.display())))?;
    if !args.quiet {
        eprintln!("wrote {} rows to {}", artifacts.rows.len(), csv_path.display());
        eprintln!("wrote {} audit records to {}", artifacts.audits.len(), audit_path.display());
    }

    if sweep {
        for &metric in &rc.metrics {
            let (ns, means) = mean_by_n(&artifacts.rows, metric);
            let summary = slope_with_ci(&ns, &means).map_err(from_core)?;
            println!(
                "{:<18} slope {:+.4}  ci_half_width {:.4}  intercept {:+.4}  points {}",
                metric.name(),
                summary.slope,
                summary.ci_half_width,
                summary.intercept,
                summary.points
            );
        }
    }
    Ok(())
}

fn check(args: CheckArgs) -> Result<(), Failure> {
    let outcomes = run_checks(args.filter.as_deref(), args.inject_schedule_error);
    if outcomes.is_empty() {
        return Err(Failure::Config(format!(
            "no check matches filter `{}`",
            args.filter.as_deref().unwrap_or_default()
        )));
    }
    let mut failed = 0usize;
    for outcome in &outcomes {
        match &outcome.detail {
            Ok(()) => {
                if !args.quiet {
                    println!("{:<24} pass", outcome.name);
                }
            }
            Err(msg) => {
                failed += 1;
                println!("{:<24} FAIL  {msg}", outcome.name);
            }
        }
    }
    if failed > 0 {
        Err(Failure::Config(format!("{failed} of {} checks failed", outcomes.len())))
    } else {
        if !args.quiet {
            println!("all {} checks passed", outcomes.len());
        }
        Ok(())
    }
}
