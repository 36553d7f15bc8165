//! `spde`: run ensembles, evaluate checks and write reports.
//!
//! Exit codes: 0 success, 1 check failure, 2 config error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spde_core::config::RunConfig;
use spde_core::ensemble::run_ensemble;
use spde_core::report::{evaluate, write_report, Format, Suite};
use spde_core::selftest::selftest;
use spde_core::verify::CheckResult;
use spde_core::SpdeError;

#[derive(Parser)]
#[command(name = "spde", version, about = "Stochastic parabolic PDE regularity laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ensemble described by a JSON config into a directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a check suite on a run directory.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// JSON report destination.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write summary.json plus CSV or JSON tables into the run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Exact-mode invariants on synthetic data.
    Selftest,
}

enum Failure {
    Checks,
    Error(SpdeError),
}

impl From<SpdeError> for Failure {
    fn from(e: SpdeError) -> Self {
        Self::Error(e)
    }
}

fn print_checks(checks: &[CheckResult]) {
    for c in checks {
        println!("{} {:<28} margin {:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.margin);
    }
}

fn verdict(checks: &[CheckResult]) -> Result<(), Failure> {
    if checks.iter().all(|c| c.pass) {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let result = run_ensemble(&cfg, &out)?;
            let m = &result.manifest;
            println!(
                "{} paths ({} resumed, {} failed) on {} threads in {:.1}s -> {}",
                m.completed,
                m.resumed,
                m.failures,
                m.thread_count,
                m.wall_time_s,
                out.display()
            );
            if m.normalization != 1.0 {
                println!("data rescaled by {} onto the unit budget", m.normalization);
            }
            Ok(())
        }
        Command::Verify { input, suite, report } => {
            let checks = evaluate(&input, suite)?;
            print_checks(&checks);
            if let Some(file) = report {
                std::fs::write(&file, serde_json::to_vec_pretty(&checks).map_err(SpdeError::from)?).map_err(SpdeError::from)?;
            }
            verdict(&checks)
        }
        Command::Report { input, format } => {
            for f in write_report(&input, format)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Selftest => {
            let checks = selftest()?;
            print_checks(&checks);
            verdict(&checks)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                SpdeError::Config(_) => 2,
                _ => 3,
            })
        }
    }
}
