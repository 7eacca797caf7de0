use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "camsel", version, about = "Forecast the best camera view in multi-camera surgical recordings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file. Its schema depends on the verb.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.max_epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for every random choice the verb makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset manifest and summarize its sequences.
    Ingest {
        /// Manifest path; defaults to `manifest` in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate planted-pattern sequences with labels, detections and features.
    Synth,
    /// Compute feature stores from keyframe images and detections.
    Extract {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Length of the stub visual descriptor per camera.
        #[arg(long, default_value_t = 512)]
        visual_dim: usize,
    },
    /// Train on every sequence's training partition and save a checkpoint.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Feature ablation: full, no_visual or no_semantic.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Score a checkpoint on the test partitions.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also run the configured protocols (these train their own models).
        #[arg(long)]
        protocols: bool,
    },
    /// Forecast labels over one sequence.
    Predict {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sequence id; every sequence when omitted.
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Render a saved metrics report.
    Report {
        /// `report.json` written by eval.
        #[arg(long)]
        metrics: PathBuf,
        /// Emit one JSON record per line instead of tables.
        #[arg(long)]
        jsonl: bool,
    },
    /// Serve the annotation API.
    Serve {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Enables the predictions endpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}
