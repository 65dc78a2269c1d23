mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use hiex_core::interaction::OracleFault;
use hiex_core::synth::PlantedConfig;

use config::{Command, ConfigError, RunArgs, RunConfig};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;
const EXIT_PROTOCOL: u8 = 4;
const EXIT_ORACLE: u8 = 5;

#[derive(Parser)]
#[command(name = "hiex", version, about = "Hierarchical explanations for text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build and render one hierarchy per sample.
    Explain {
        #[command(flatten)]
        run: RunArgs,
    },
    /// AOPC table and accuracy-degradation curves.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Explainers to compare: flat, unrestricted, connecting, random, random-words.
        #[arg(long, value_delimiter = ',')]
        explainers: Option<Vec<String>>,
    },
    /// Check the erasure identity and forward-pass counts on a builtin model.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train the builtin model and save it as JSON.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Word pairs given an explicit product feature, as a:b.
        #[arg(long, value_delimiter = ',')]
        product: Vec<String>,
    },
    /// Write a synthetic corpus with one planted word interaction.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        samples: usize,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Cmd::Explain { run } => {
            let cfg = RunConfig::resolve(Command::Explain, run, None, None)?;
            let files = commands::explain(&cfg)?;
            println!("wrote {} files", files.len());
        }
        Cmd::Evaluate { run, explainers } => {
            let cfg = RunConfig::resolve(Command::Evaluate, run, explainers, None)?;
            print!("{}", commands::evaluate(&cfg)?.to_text());
        }
        Cmd::Oracle { run, tolerance, inject_fault } => {
            let cfg = RunConfig::resolve(Command::Oracle, run, None, tolerance)?;
            let fault = if inject_fault { OracleFault::DropConditioning } else { OracleFault::None };
            let report = commands::oracle(&cfg, fault)?;
            for line in report.failures() {
                eprintln!("FAIL {line}");
            }
            let failed = report.entries.iter().filter(|e| !e.passed).count();
            println!("oracle: {} checks, {failed} failed", report.entries.len());
            return Ok(report.passed);
        }
        Cmd::Train { dataset, out, seed, product } => {
            let pairs = product
                .iter()
                .map(|p| match p.split_once(':') {
                    Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_owned(), b.to_owned())),
                    _ => Err(ConfigError(format!("--product {p:?} is not a:b"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let model = commands::train(&dataset, &out, seed, &pairs)?;
            println!("wrote {} ({} words)", out.display(), model.weights().len());
        }
        Cmd::Synth { out, seed, samples } => {
            if samples == 0 {
                bail!(ConfigError("--samples must be positive".into()));
            }
            let cfg = PlantedConfig { num_samples: samples, seed, ..PlantedConfig::default() };
            let n = commands::synth(&out, &cfg)?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(true)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        match cause.downcast_ref::<hiex_core::Error>() {
            Some(hiex_core::Error::Transport { .. }) => return EXIT_TRANSPORT,
            Some(hiex_core::Error::Protocol { .. }) => return EXIT_PROTOCOL,
            _ => {}
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_ORACLE),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
