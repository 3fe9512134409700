//! `occlp`: runs described by a JSON config.
//!
//! Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 a diagnostic
//! failed under `--strict`, 1 anything else (i/o).

mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::output::RunDir;

#[derive(Parser)]
#[command(
    name = "occlp",
    version,
    about = "Occupational-measure LP runs for optimal control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trajectory and occupational measure CSV for each y0.
    Simulate(RunArgs),
    /// Finite-horizon and discounted value tables.
    Value(RunArgs),
    /// k*, the extracted certificate and the duality gap.
    Lp(RunArgs),
    /// Verify a certificate on a grid four times finer than the state grid.
    Certify(RunArgs),
    /// Synthesize the feedback law from a certificate and roll it out.
    Feedback(RunArgs),
    /// W residuals, Hausdorff trend, gradient diagnostic, value-below-cost.
    Diagnose(RunArgs),
    /// Aggregate JSON and SVG plots.
    Report(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration.
    config: PathBuf,
    /// Exit with status 4 if any check fails.
    #[arg(long)]
    strict: bool,
    /// Output root, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run directory name instead of a timestamp.
    #[arg(long)]
    run_id: Option<String>,
}

fn run(name: &str, args: &RunArgs) -> Result<bool, CliError> {
    let resolved = config::load(&args.config)?;
    let root = args
        .out
        .clone()
        .unwrap_or_else(|| resolved.config.output_dir.clone());
    let dir = RunDir::create(&root, name, args.run_id.as_deref())?;
    let outcome = match name {
        "simulate" => commands::simulate(&resolved, &dir),
        "value" => commands::value(&resolved, &dir),
        "lp" => commands::lp(&resolved, &dir),
        "certify" => commands::certify(&resolved, &dir),
        "feedback" => commands::feedback(&resolved, &dir),
        "diagnose" => commands::diagnose(&resolved, &dir),
        "report" => commands::report(&resolved, &dir),
        _ => unreachable!("subcommand names are fixed"),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            // leave no half-written run behind
            let _ = std::fs::remove_dir_all(&dir.path);
            return Err(e);
        }
    };
    for line in &outcome.lines {
        println!("{line}");
    }
    println!("wrote {}", dir.path.display());
    Ok(outcome.failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Value(a) => ("value", a),
        Command::Lp(a) => ("lp", a),
        Command::Certify(a) => ("certify", a),
        Command::Feedback(a) => ("feedback", a),
        Command::Diagnose(a) => ("diagnose", a),
        Command::Report(a) => ("report", a),
    };
    match run(name, args) {
        Ok(true) if args.strict => {
            eprintln!("occlp {name}: a check failed");
            ExitCode::from(4)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("occlp {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
