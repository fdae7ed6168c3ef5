use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Preset;

#[derive(Debug, Parser)]
#[command(
    name = "fedransom",
    version,
    about = "Ransomware detection with a CNN over binaries rendered as grayscale images, trained centrally or with federated averaging"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus plus train/val/test manifests.
    Synth(SynthArgs),
    /// Build a manifest from a directory of binaries; labels come from subdirectory names.
    Index(IndexArgs),
    /// Split a manifest into per-client shard manifests for serve/client runs.
    Shard(ShardArgs),
    /// Train a model on one machine.
    Train(TrainArgs),
    /// Run a simulated federation in one process.
    Fedtrain(FedtrainArgs),
    /// Coordinate a federation over TCP.
    Serve(ServeArgs),
    /// Join a federation over TCP and train on a local shard.
    Client(ClientArgs),
    /// Evaluate a checkpoint on a labeled manifest.
    Eval(EvalArgs),
    /// Classify individual files.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML settings file; command-line flags take precedence over it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Hyperparameter bundle; `desk` is a small setting that trains in minutes.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Master seed; falls back to the config file, then FEDRANSOM_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Image side length in pixels.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub dropout: Option<f32>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FedFlags {
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long)]
    pub local_epochs: Option<usize>,
    /// 0 shards IID; 1 sorts shards by label.
    #[arg(long)]
    pub label_skew: Option<f32>,
}

#[derive(Debug, Clone, Args)]
pub struct Outputs {
    #[arg(long, value_name = "FILE", default_value = "model.frwm")]
    pub checkpoint_out: PathBuf,
    /// Report file; `.csv` selects CSV, anything else JSON.
    #[arg(long, value_name = "FILE")]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory whose subdirectories are named after their class.
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
    /// Manifest to write; defaults to DIR/manifest.jsonl.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Skip writing train/val/test manifests.
    #[arg(long)]
    pub no_split: bool,
}

#[derive(Debug, Args)]
pub struct ShardArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub fed: FedFlags,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub val_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for shuffling and dropout; defaults to the master seed.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct FedtrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub val_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub fed: FedFlags,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: SocketAddr,
    #[arg(long, value_name = "FILE")]
    pub val_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub fed: FedFlags,
    /// Seconds to wait for every client to join.
    #[arg(long, default_value_t = 300)]
    pub join_timeout: u64,
    /// Seconds a connection may stay silent.
    #[arg(long, default_value_t = 300)]
    pub idle_timeout: u64,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub connect: SocketAddr,
    /// This client's shard manifest.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Defaults to the manifest's file stem.
    #[arg(long)]
    pub client_id: Option<String>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub fed: FedFlags,
    #[arg(long, default_value_t = 300)]
    pub idle_timeout: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub report_out: Option<PathBuf>,
    /// Ransomware probability above which a file is flagged.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(required = true, value_name = "FILE")]
    pub files: Vec<PathBuf>,
}
