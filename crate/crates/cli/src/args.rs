use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use csa_core::executor::{ExecutorConfig, InputMode};
use csa_core::pipeline::LearnConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "csa", version, about = "Learn, inspect, simulate and serve shared-autonomy behaviors")]
pub struct Cli {
    /// Print one JSON document on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    /// TOML file; its table named after the subcommand overrides the flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate demonstrations with planted correction structure.
    Synth(SynthArgs),
    /// Validate a demonstration log and summarize it.
    Ingest(IngestArgs),
    /// Align, segment and fit primitives and correction schedules.
    Learn(LearnArgs),
    /// Report the learned principal components of a bundle.
    InspectPcs(InspectArgs),
    /// Run a bundle headless with a scripted operator.
    Simulate(SimulateArgs),
    /// Serve sessions over HTTP and WebSocket.
    Serve(ServeArgs),
    /// Re-execute a logged run and check it bit for bit.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Learn(_) => "learn",
            Command::InspectPcs(_) => "inspect-pcs",
            Command::Simulate(_) => "simulate",
            Command::Serve(_) => "serve",
            Command::Replay(_) => "replay",
        }
    }
}

pub fn parse_mode(s: &str) -> Result<InputMode, String> {
    match s {
        "1dof" => Ok(InputMode::OneDof),
        "3dof" => Ok(InputMode::ThreeDof),
        other => Err(format!("expected 1dof or 3dof, got `{other}`")),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    /// Synthesis spec (`csa-synth` JSON).
    pub spec: PathBuf,
    /// Directory for demos.log, surface.json and truth.json.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Overrides the seed in the synthesis file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of demonstrations in the synthesis file.
    #[arg(long)]
    pub num_demos: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestArgs {
    /// Demonstration log.
    pub input: PathBuf,
    /// Write the validated set back out in canonical form.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnArgs {
    /// Demonstration log.
    pub demos: PathBuf,
    /// Surface definition for projecting in-contact segments.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    /// Bundle to write.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Contact force threshold (N).
    #[arg(long)]
    pub force_threshold: Option<f64>,
    /// Explained fraction the first component needs for a 1-DOF recommendation.
    #[arg(long)]
    pub k_threshold: Option<f64>,
    /// Full pipeline settings; config file only.
    #[arg(skip)]
    #[serde(default)]
    pub pipeline: Option<LearnConfig>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectArgs {
    pub bundle: PathBuf,
    /// Ground truth from `synth`; turns the report into a pass/fail check.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Only this segment.
    #[arg(long)]
    pub segment: Option<usize>,
    /// Largest allowed angle (degrees) to a planted direction.
    #[arg(long, default_value_t = 3.0)]
    pub angle_tolerance: f64,
    /// Largest allowed explained-fraction error (fraction, not points).
    #[arg(long, default_value_t = 0.02)]
    pub fraction_tolerance: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    pub bundle: PathBuf,
    /// Environment scenario; without one only the motion is simulated.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Scripted operator: null or posterior.
    #[arg(long, default_value = "null")]
    pub policy: String,
    #[arg(long, default_value = "1dof", value_parser = parse_mode)]
    pub mode: InputMode,
    /// Stop after this much simulated time (s).
    #[arg(long, default_value_t = 300.0)]
    pub max_duration: f64,
    /// Write the execution log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Executor settings; config file only. `mode` still applies.
    #[arg(skip)]
    #[serde(default)]
    pub executor: Option<ExecutorConfig>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Bundles to preload.
    #[arg(long)]
    pub bundle: Vec<PathBuf>,
    /// Scenarios to preload.
    #[arg(long)]
    pub scenario: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayArgs {
    pub bundle: PathBuf,
    /// Execution log (JSONL).
    pub log: PathBuf,
}
