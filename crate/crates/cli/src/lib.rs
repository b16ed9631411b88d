//! Command-line driver for the boundary-aware proposal pipeline.

pub mod config;
pub mod error;
pub mod stages;

use std::path::{Path, PathBuf};

use clap::Parser;

use crate::config::{parse_config, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::stages::{run_subcommand, Context, STAGES};

#[derive(Debug, Parser)]
#[command(name = "bapg", version, about = "Boundary-aware action proposal generation")]
pub struct Args {
    /// One of synth, pools, train, embed, simmat, segment, propose, refine, eval, pipeline.
    pub subcommand: String,

    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Global seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,

    /// `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Proposal files to compare in `eval`.
    #[arg(long = "proposals")]
    pub proposals: Vec<PathBuf>,
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<PipelineConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| CliError::ConfigFile {
            path: p.to_path_buf(),
            source,
        })?,
        None => String::new(),
    };
    Ok(parse_config(&text, overrides)?)
}

pub fn run(args: &Args) -> CliResult<()> {
    if args.subcommand != "pipeline" && !STAGES.contains(&args.subcommand.as_str()) {
        return Err(CliError::UnknownSubcommand(args.subcommand.clone()));
    }
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = load_config(args.config.as_deref(), &overrides)?;
    let ctx = Context {
        out: args.out.clone(),
        cfg,
        proposal_files: args.proposals.clone(),
    };
    run_subcommand(&args.subcommand, &ctx)
}
