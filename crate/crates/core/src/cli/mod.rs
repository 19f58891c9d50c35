//! Command-line pipeline: every subcommand reads its upstream artifacts
//! from the work directory and writes its own, atomically.

mod config;
mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "sdfedit", version, about = "Latent-space attribute editing for neural signed distance fields")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding every stage's artifacts.
    #[arg(long, global = true)]
    pub work: Option<PathBuf>,
    /// Seed applied to every stage (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the synthetic car corpus (meshes, SDF samples, labels).
    GenData {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Fit the auto-decoder and one latent per shape.
    TrainSdf {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the latent-to-attribute regressor.
    TrainRegressor {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit per-attribute edit directions against the frozen regressor.
    TrainEditor {
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Edit a shape's latent and export the resulting mesh.
    Edit {
        #[arg(long)]
        shape: String,
        /// `name=eps`, repeatable.
        #[arg(long = "attr", value_parser = parse_attr)]
        attrs: Vec<(String, f64)>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a shape's mesh from its trained latent.
    Reconstruct {
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a JSON report: reconstruction chamfer, regressor MAE and edit statistics.
    Metrics {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only the first N shapes in the chamfer table.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Export 2-D latent coordinates (CSV) and the raw latents.
    Embed {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP editing API over the trained checkpoints.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        #[arg(long)]
        variant: Option<String>,
    },
}

fn parse_attr(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=eps, got `{s}`"))?;
    let v: f64 = value.trim().parse().map_err(|e| format!("bad eps in `{s}`: {e}"))?;
    Ok((name.trim().to_string(), v))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli)?;
    stages::dispatch(&cli.command, &cfg)
}

/// 2 for a missing upstream artifact, 1 for anything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<sdfedit::Error>() {
        Some(sdfedit::Error::MissingArtifact { .. }) => 2,
        _ => 1,
    }
}
