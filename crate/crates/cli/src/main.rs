mod commands;
mod error;
mod manifest;
mod store;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{fit, generate, indicators, ingest, pipeline, validate};

/// Disease-free survival and life-expectancy indicators from hospital records.
#[derive(Debug, Parser)]
#[command(name = "disfle", version)]
struct Cli {
    /// Root under which each run writes `<manifest hash>/`.
    #[arg(long, global = true, env = "DISFLE_RUN_DIR", default_value = "runs")]
    run_root: PathBuf,
    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic cohort with known hazards.
    Generate(generate::GenerateArgs),
    /// Parse subjects, apply exclusions and build the cohort store.
    Ingest(ingest::IngestArgs),
    /// Fit the Cox model on the training partition.
    Fit(fit::FitArgs),
    /// Survival and Dis-FLE curves from a fit or from Kaplan-Meier.
    Indicators(indicators::IndicatorArgs),
    /// Concordance and calibration on the held-out partition.
    Validate(validate::ValidateArgs),
    /// Every step on one cohort, bundled data by default.
    Pipeline(pipeline::PipelineArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let root = &cli.run_root;
    let result = match &cli.command {
        Command::Generate(a) => generate::run(a, root),
        Command::Ingest(a) => ingest::run(a, root),
        Command::Fit(a) => fit::run(a, root),
        Command::Indicators(a) => indicators::run(a, root),
        Command::Validate(a) => validate::run(a, root),
        Command::Pipeline(a) => pipeline::run(a, root),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
