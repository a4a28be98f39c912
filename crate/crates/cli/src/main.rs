//! `hamcg`: config-driven runner for the coarse-graining pipelines.
//!
//! One scenario per invocation, selected by the `scenario` key of the TOML
//! config. All artifacts land in the output directory together with a
//! `manifest.json` stamping the config hash, tool version, seed, and thread
//! count. Exit codes: 0 success, 2 config error, 3 numeric or write failure,
//! 4 verification failure.

mod config;
mod error;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use hamcg_core::io::{self, Manifest};

use crate::error::{Error, Result, EXIT_VERIFY};

#[derive(Parser)]
#[command(name = "hamcg", version, about = "Coarse-graining pipelines for kinetic equations")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides the config's [output] dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed override for the stochastic scenarios.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker thread count; overrides HAMCG_THREADS and [output] threads.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let started = Instant::now();
    let raw = std::fs::read(&cli.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let cfg = config::parse(&raw)?;
    let threads = init_threads(resolve_threads(cli.threads, cfg.output.threads)?);
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::Run(format!("cannot create {}: {e}", out_dir.display())))?;

    let outcome = scenarios::run(&cfg, &out_dir, cli.seed)?;

    let manifest = Manifest {
        scenario: cfg.scenario.name().to_string(),
        config_sha256: io::sha256_hex(&raw),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        format_version: 1,
        seed: outcome.seed,
        threads,
        wall_seconds: started.elapsed().as_secs_f64(),
        outputs: outcome.files.clone(),
    };
    io::save_text(&out_dir.join("manifest.json"), &io::manifest_json(&manifest)?)?;
    println!(
        "{}: wrote {} file(s) to {}",
        cfg.scenario.name(),
        outcome.files.len() + 1,
        out_dir.display()
    );

    match outcome.verify_pass {
        Some(false) => Ok(ExitCode::from(EXIT_VERIFY)),
        _ => Ok(ExitCode::SUCCESS),
    }
}

/// Flag beats HAMCG_THREADS, which beats the config. None keeps the
/// library default.
fn resolve_threads(flag: Option<usize>, from_config: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("HAMCG_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("HAMCG_THREADS must be a thread count, got {s:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(from_config),
        Err(e) => Err(Error::Config(format!("HAMCG_THREADS: {e}"))),
    }
}

#[cfg(feature = "parallel")]
fn init_threads(requested: Option<usize>) -> usize {
    if let Some(n) = requested {
        if n > 0 {
            // the global pool can be set only once per process; losing the
            // race just means the default pool was already started
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_requested: Option<usize>) -> usize {
    1
}
