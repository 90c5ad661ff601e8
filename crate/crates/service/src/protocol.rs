//! Messages exchanged over the session WebSocket, and the REST payloads.
//!
//! Every WebSocket message is a JSON object with a `type` tag. The schema
//! document served at `/api/v1/schema` (and shipped as
//! `message-schema.json`) describes them all.

use csa_core::executor::{ExecutorConfig, InputMode, TelemetryFrame};
use csa_core::formats::Schema;
use csa_core::segmentation::SegmentKind;
use serde::{Deserialize, Serialize};

/// Version of the message schema. Clients should reject a different major.
pub const PROTOCOL_VERSION: &str = "1.0.0";

pub const MESSAGE_SCHEMA: &str = include_str!("../message-schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Created,
    Running,
    Paused,
    Completed,
    Faulted,
}

impl Lifecycle {
    pub fn is_terminal(self) -> bool {
        matches!(self, Lifecycle::Completed | Lifecycle::Faulted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Created => "created",
            Lifecycle::Running => "running",
            Lifecycle::Paused => "paused",
            Lifecycle::Completed => "completed",
            Lifecycle::Faulted => "faulted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Resume,
    Abort,
}

impl std::str::FromStr for ControlAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "start" => Ok(ControlAction::Start),
            "pause" => Ok(ControlAction::Pause),
            "resume" => Ok(ControlAction::Resume),
            "abort" => Ok(ControlAction::Abort),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Device displacement, normalized to [-1, 1] per axis.
    Input {
        d: Vec<f64>,
        #[serde(default)]
        reverse: bool,
        /// Client clock (s); later messages must not carry earlier times.
        client_time: f64,
    },
    Control {
        action: ControlAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckOutcome {
    /// Latched; applied from the next tick on.
    Latched,
    /// Older than the latched input, dropped.
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    InvalidState,
    NotRunning,
    NotController,
    InvalidInput,
    BadMessage,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub bundle_id: String,
    pub scenario_id: Option<String>,
    pub input_mode: InputMode,
    pub state: Lifecycle,
    /// Why the session paused or faulted.
    pub reason: Option<String>,
    pub tick: u64,
    pub warnings: Vec<String>,
    pub removal_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
    pub schema: Schema,
    pub recommended_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ServerMessage {
    /// First message on every connection.
    Hello {
        protocol_version: String,
        client_id: u64,
        session: SessionSummary,
        config: ExecutorConfig,
        segments: Vec<SegmentInfo>,
    },
    Telemetry {
        session: String,
        /// Seconds since the session was created, on the server clock.
        server_time: f64,
        /// `client_time` of the input applied on this tick.
        input_client_time: Option<f64>,
        frame: Box<TelemetryFrame>,
    },
    Ack {
        client_time: f64,
        outcome: AckOutcome,
    },
    /// Lifecycle change.
    Status {
        session: SessionSummary,
    },
    /// This client fell behind and the oldest frames were dropped.
    Lagged {
        missed: u64,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub bundle_id: String,
    #[serde(default)]
    pub scenario_id: Option<String>,
    pub input_mode: InputMode,
    /// Executor settings; `input_mode` above takes precedence.
    #[serde(default)]
    pub config: Option<ExecutorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub id: String,
    pub digest: String,
    pub task: String,
    pub segments: Vec<SegmentKind>,
    pub recommended_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub id: String,
    pub name: String,
    pub seed: u64,
    pub grid: [usize; 2],
    pub tool_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub error: String,
}
