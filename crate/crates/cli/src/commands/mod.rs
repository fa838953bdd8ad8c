//! Command definitions, config-file merging, and the exit-code contract.
//!
//! Every command reads an optional JSON config file (unknown keys are
//! rejected), lays any provided flags over it, validates, runs, and writes
//! its artifacts under `--out`. Reruns with the same inputs produce
//! byte-identical files.

mod eval_run;
mod gen_data;
mod oracle;
mod spectrum;
mod sweep_run;
mod train_run;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use cauvis_core::{Error, Result};

#[derive(Parser)]
#[command(name = "cauvis", version, about = "Synthetic bias lab: data, training, sweeps, oracles")]
pub struct Cli {
    /// JSON config file for the chosen command; flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for every random stream of the command.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Output directory; created if missing.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic bias dataset on disk.
    GenData(gen_data::GenDataArgs),
    /// Train a model on a generated dataset and write checkpoint + history.
    Train(train_run::TrainArgs),
    /// Evaluate a checkpoint on both test splits.
    Eval(eval_run::EvalArgs),
    /// Train the full (bias level, kind, seed) grid and report gaps.
    Sweep(sweep_run::SweepArgs),
    /// Dump attention singular-value spectra from a checkpoint.
    Spectrum(spectrum::SpectrumArgs),
    /// Check the adjustment identity on random models; exit 0 only on pass.
    Oracle(oracle::OracleArgs),
}

/// Maps the library error taxonomy onto the stable exit-code contract:
/// 2 for IO, 3 for anything wrong with inputs or configuration, 4 for
/// numeric or training failures.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 2,
        Error::Shape(_) | Error::Config(_) | Error::Lookup(_) | Error::Format(_) => 3,
        Error::Numeric(_)
        | Error::NoConvergence { .. }
        | Error::Graph(_)
        | Error::Training { .. } => 4,
    }
}

pub fn run(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::GenData(args) => gen_data::run(cli, args),
        Command::Train(args) => train_run::run(cli, args),
        Command::Eval(args) => eval_run::run(cli, args),
        Command::Sweep(args) => sweep_run::run(cli, args),
        Command::Spectrum(args) => spectrum::run(cli, args),
        Command::Oracle(args) => oracle::run(cli, args),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// Loads the command's config type from `--config`, or its default when the
/// flag is absent. Unknown or malformed keys are configuration errors.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("config file {}: {e}", p.display())))
        }
    }
}

/// The command's output directory, created if needed.
fn ensure_out_dir(cli: &Cli, default_name: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default_name));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Hex SHA-256 over the named files' bytes, concatenated in the given
/// order. Used to print a single fingerprint for a multi-file artifact.
fn checksum_files(paths: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in paths {
        hasher.update(fs::read(path)?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|e| Error::config(format!("bad number {part:?}: {e}")))
        })
        .collect()
}

fn parse_u64_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|e| Error::config(format!("bad seed {part:?}: {e}")))
        })
        .collect()
}
