//! The `fairvec` command line.
//!
//! Each subcommand reads files written by an earlier one and writes its own
//! outputs plus a `manifest.json` into one directory:
//! `generate → pairs → audit / debias → probe → report`.

pub mod audit;
pub mod debias;
pub mod files;
pub mod generate;
pub mod manifest;
pub mod pairs;
pub mod probe;
pub mod report;
mod svg;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fairvec::embedding::EmbeddingFormat;
use thiserror::Error;

pub use manifest::{Artifact, RunManifest, MANIFEST_NAME};

#[derive(Debug, Parser)]
#[command(name = "fairvec", version, about = "Bias audit and adversarial debiasing of face embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random stream [default: 0, or the config file's seed].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for fold jobs [default: all cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Format of embedding files written (csv or binary).
    #[arg(long, global = true, default_value = "binary")]
    pub format: EmbeddingFormat,
}

impl GlobalArgs {
    pub fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic embedding set.
    Generate(generate::GenerateArgs),
    /// Assign subject folds and build genuine/imposter pairs.
    Pairs(pairs::PairsArgs),
    /// Calibrate thresholds and audit per-subgroup error rates.
    Audit(audit::AuditArgs),
    /// Train the adversarial debiasing model fold by fold.
    Debias(debias::DebiasArgs),
    /// Measure how well a classifier recovers subgroups from features.
    Probe(probe::ProbeArgs),
    /// Merge baseline and debiased runs into comparison tables.
    Report(report::ReportArgs),
}

/// Failures caused by the invocation rather than the computation.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("missing {what}: {path} does not exist")]
    Missing { what: &'static str, path: String },
    #[error("{0}")]
    Usage(String),
}

/// Runs one parsed invocation inside a pool capped at `--threads`.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(InputError::Usage("--threads must be at least 1".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    let g = &cli.global;
    pool.install(|| match &cli.command {
        Command::Generate(a) => generate::run(a, g),
        Command::Pairs(a) => pairs::run(a, g),
        Command::Audit(a) => audit::run(a, g),
        Command::Debias(a) => debias::run(a, g),
        Command::Probe(a) => probe::run(a, g),
        Command::Report(a) => report::run(a, g),
    })
}

/// Parses `args` (program name first) and runs them.
pub fn run_args<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| InputError::Usage(e.to_string()))?;
    run(&cli)
}

/// 2 for usage and input errors, 1 for internal or numeric failures.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fairvec::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
        if cause.is::<InputError>() || cause.is::<serde_json::Error>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}
