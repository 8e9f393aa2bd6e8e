// SPDX-License-Identifier: MIT OR Apache-2.0

//! `ccpd`: simulate, preprocess, fit, detect, report and self-check.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#![forbid(unsafe_code)]

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Mode, Overrides, RunConfig, Scenario};

/// A problem with flags, configuration or settings rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "ccpd", version, about = "Change-point detection on circadian mobility data")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a synthetic dataset with planted change points.
    Simulate,
    /// Turn a timestamp,lat,lon trace file into daily observations.
    Preprocess,
    /// Fit the circadian mixture and write class posteriors.
    Fit,
    /// Run online change-point detection on labels or class posteriors.
    Detect,
    /// Run the small-instance oracle suite.
    OracleCheck,
    /// Write plot-ready series from a detection run.
    Report,
}

#[derive(Args, Debug)]
struct Flags {
    /// Observation model of the detector.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Synthetic scenario for `simulate`.
    #[arg(long, global = true, value_enum)]
    scenario: Option<Scenario>,
    /// Number of latent classes.
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    /// Fourier order of the fitted kernels.
    #[arg(long = "C", global = true)]
    c: Option<usize>,
    /// Hazard timescale (expected run length).
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Total Dirichlet concentration of simulated partitions.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Fraction of simulated days masked completely at random.
    #[arg(long = "missing-rate", global = true)]
    missing_rate: Option<f64>,
    /// Posterior samples per predictive in `fpo` mode.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Seed for simulation, EM restarts and the sampler.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// EM restarts.
    #[arg(long = "n-init", global = true)]
    n_init: Option<usize>,
    /// EM stopping tolerance on the log-likelihood change.
    #[arg(long = "epsilon-q", global = true)]
    epsilon_q: Option<f64>,
    /// Input file, or the run directory for `report`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "ccpd-out")]
    output: PathBuf,
    /// TOML configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long = "dump-config", global = true)]
    dump_config: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            mode: self.mode,
            scenario: self.scenario,
            k: self.k,
            c: self.c,
            tau: self.tau,
            alpha: self.alpha,
            missing_rate: self.missing_rate,
            samples: self.samples,
            seed: self.seed,
            n_init: self.n_init,
            epsilon_q: self.epsilon_q,
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let mut cfg = RunConfig::load(cli.flags.config.as_deref())?;
    cfg.apply(&cli.flags.overrides());
    if cli.flags.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(true);
    }
    let input = cli.flags.input.as_deref();
    let out = cli.flags.output.as_path();
    let Some(command) = cli.command else {
        return Err(UsageError("a subcommand is required; see --help".into()).into());
    };
    match command {
        Command::Simulate => commands::cmd_simulate(&cfg, out)?,
        Command::Preprocess => commands::cmd_preprocess(&cfg, input, out)?,
        Command::Fit => commands::cmd_fit(&cfg, input, out)?,
        Command::Detect => commands::cmd_detect(&cfg, input, out)?,
        Command::Report => commands::cmd_report(input, out)?,
        Command::OracleCheck => {
            let explicit_out = std::env::args().any(|a| a == "--output" || a.starts_with("--output="));
            return commands::cmd_oracle_check(&cfg, explicit_out.then_some(out));
        }
    }
    Ok(true)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<circadian_cpd::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.flags.verbose {
        tracing::Level::INFO
    } else {
        tracing::Level::WARN
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: oracle checks failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
