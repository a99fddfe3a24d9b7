//! `cordon`: batch pipeline over market-level choice data.

mod commands;
mod config;
mod context;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use config::RunConfig;
use context::RunContext;
use failure::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Load and check the four input tables.
    Validate,
    /// Draw a synthetic dataset with known parameters.
    Synth,
    /// Fit the choice model per segment.
    Estimate,
    /// Predict trips before and under pricing.
    Predict,
    /// Fit the toll constants to observed traffic changes.
    Calibrate,
    /// Consumer surplus, compensating variation and values of time.
    Welfare,
    /// Transit wait and fare packages that offset welfare losses.
    Compensate,
    /// Annual toll revenue by population, vehicle class and period.
    Revenue,
    /// estimate, calibrate, welfare, revenue and compensate in one run.
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Synth => "synth",
            Command::Estimate => "estimate",
            Command::Predict => "predict",
            Command::Calibrate => "calibrate",
            Command::Welfare => "welfare",
            Command::Compensate => "compensate",
            Command::Revenue => "revenue",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cordon", version, about = "Cordon pricing demand, welfare and compensation pipeline")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration; every key has a default.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set estimate.method=OLS`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Log progress at info level (debug when repeated).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        builder = builder.num_threads(cfg.workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::usage(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let mut ctx = RunContext::new(cfg, cli.command.name(), cli.config.as_deref());
    pool.install(|| {
        let outcome = commands::run(&mut ctx, cli.command.name());
        match outcome {
            Ok(()) => ctx.finish(None),
            Err(e) => {
                if let Err(m) = ctx.finish(Some(&e)) {
                    log::warn!("manifest not written: {m}");
                }
                Err(e)
            }
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
