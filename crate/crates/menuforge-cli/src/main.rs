//! `menuforge` — experiment driver for menu-network auctions: train,
//! certify compatibility via price transformation, evaluate, verify, and
//! compare against analytic baselines.
//!
//! Exit codes: 0 success, 1 failed check or runtime failure, 2 usage error.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

/// A bad invocation or unreadable/invalid input file (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A completed check that did not pass (exit code 1).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Parser)]
#[command(
    name = "menuforge",
    version,
    about = "Learn, certify, and evaluate strategy-proof menu auctions"
)]
struct Cli {
    /// Worker thread cap (default: MENUFORGE_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a menu network from an experiment config.
    Train(commands::TrainArgs),
    /// Certify a checkpoint compatible via grid price adjustments.
    Transform(commands::TransformArgs),
    /// Estimate expected revenue of a mechanism or raw checkpoint.
    Eval(commands::EvalArgs),
    /// Run compatibility, misreport, and IR checks (exit 1 on failure).
    Verify(commands::VerifyArgs),
    /// Analytic / Monte-Carlo baseline revenues.
    Baseline(commands::BaselineArgs),
    /// Sweep bid values and tabulate allocations and payments.
    Slice(commands::SliceArgs),
    /// Write one grid point's price program as an LP file.
    MilpExport(commands::MilpExportArgs),
    /// Join eval/baseline/verify outputs into a comparison table.
    Report(commands::ReportArgs),
}

fn init_threads(explicit: Option<usize>) {
    let threads = explicit.or_else(|| {
        std::env::var("MENUFORGE_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(threads) = threads.filter(|&t| t > 0) {
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn dispatch(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Train(args) => commands::cmd_train(args),
        Command::Transform(args) => commands::cmd_transform(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Verify(args) => commands::cmd_verify(args),
        Command::Baseline(args) => commands::cmd_baseline(args),
        Command::Slice(args) => commands::cmd_slice(args),
        Command::MilpExport(args) => commands::cmd_milp_export(args),
        Command::Report(args) => commands::cmd_report(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
