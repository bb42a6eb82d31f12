use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use sdde_cli::{parse_config_with_overrides, run, Status};

/// Truncated Euler-Maruyama experiments for stochastic delay equations.
#[derive(Debug, Parser)]
#[command(name = "sdde", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Override a config field, e.g. `--set policy.rho=0.1` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    output: Option<PathBuf>,

    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads, 0 = one per core. Never changes results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn execute(cli: Cli) -> Result<Status> {
    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let mut overrides = cli.set;
    if let Some(dir) = &cli.output {
        let dir = dir.to_str().context("output path is not UTF-8")?;
        overrides.push(format!("output_dir={}", serde_json::to_string(dir)?));
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    let config = parse_config_with_overrides(&text, &overrides)
        .with_context(|| format!("invalid config {}", cli.config.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()?;
    pool.install(|| run(&config))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
