//! Batch driver: parse scenario configurations, run the solvers, write CSV
//! and JSON reports.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure,
//! 3 invariant-threshold failure.

mod config;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scenarios::{run_text, validate_text, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "apfluid", about = "Asymptotic-preserving plasma fluid solvers", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Scenario configuration file (sectioned key=value text).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized initial data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for internal sweeps.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its reports.
    Run(CommonArgs),
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a stability-map scenario (the configured kind must match).
    StabilityMap(CommonArgs),
    /// Run an anisotropic-solver conditioning sweep (kind must match).
    AnisoSweep(CommonArgs),
}

fn read_config(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn run_kind_checked(args: &CommonArgs, expect_kind: Option<&str>) -> Result<(), CliError> {
    let text = read_config(&args.config)?;
    if let Some(kind) = expect_kind {
        let has = text
            .lines()
            .any(|l| l.split_once('=').map(|(k, v)| k.trim() == "kind" && v.trim() == kind).unwrap_or(false));
        if !has {
            return Err(CliError::Config(format!("this subcommand expects `kind = {kind}`")));
        }
    }
    let opts = RunOptions { out_dir: args.out.clone(), seed: args.seed, threads: args.threads };
    let summary = run_text(&text, &opts)?;
    for inv in &summary.invariants {
        println!(
            "invariant {}: observed {:e} <= {:e} [{}]",
            inv.name,
            inv.observed,
            inv.threshold,
            if inv.pass { "pass" } else { "FAIL" }
        );
    }
    for out in &summary.outputs {
        println!("wrote {out}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_kind_checked(args, None),
        Command::StabilityMap(args) => run_kind_checked(args, Some("stability-map")),
        Command::AnisoSweep(args) => run_kind_checked(args, Some("aniso-sweep")),
        Command::Validate { config } => (|| {
            let text = read_config(config)?;
            let diags = validate_text(&text);
            if diags.is_empty() {
                println!("configuration ok");
                Ok(())
            } else {
                Err(CliError::Config(config::format_diagnostics(&diags)))
            }
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
