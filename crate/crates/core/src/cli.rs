//! Command-line front end for [`Pipeline`].
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical
//! failure. `GRAE_THREADS` caps the worker pool.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::error;

use crate::config::{parse_seed_list, PipelineConfig};
use crate::error::{GraeError, Result};
use crate::pipeline::{Pipeline, Stage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "grae", version, about = "Geometry-regularized autoencoder pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Pipeline config (`section.key = value` lines). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Comma-separated seed list overriding `run.seeds`.
    #[arg(long, global = true)]
    pub seed: Option<String>,

    /// Output directory overriding `run.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Also write diffusion intermediates (potential, entropy curve, spectrum).
    #[arg(long, global = true)]
    pub dump_intermediates: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate (or load) the dataset and its train/test split.
    Generate,
    /// Reference embedding of the training rows.
    Embed,
    /// Reference embedding through the batched, anchor-stitched path.
    Stitch,
    /// Train every configured model.
    Train,
    /// Score trained models on the test split and aggregate over seeds.
    Evaluate,
    /// All stages: generate, embed, train, evaluate, plot.
    Run,
    /// Scatter plots of the trained encoders.
    Plot,
}

impl Command {
    pub fn stages(self) -> Vec<Stage> {
        match self {
            Command::Generate => vec![Stage::Generate],
            Command::Embed => vec![Stage::Embed],
            Command::Stitch => vec![Stage::Stitch],
            Command::Train => vec![Stage::Train],
            Command::Evaluate => vec![Stage::Evaluate],
            Command::Run => Stage::FULL.to_vec(),
            Command::Plot => vec![Stage::Plot],
        }
    }
}

pub fn exit_code(e: &GraeError) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_CONFIG
    }
}

/// Resolves the effective config: file (or defaults) plus flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = &cli.seed {
        cfg.seeds = parse_seed_list(s)?;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Sizes the global worker pool from `GRAE_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("GRAE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| GraeError::Config(format!("GRAE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| GraeError::Config(format!("cannot size thread pool: {e}")))
}

pub fn run_cli(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = resolve_config(cli)?;
    Pipeline::new(cfg, cli.dump_intermediates).execute(&cli.command.stages())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
