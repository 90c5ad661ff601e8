//! The arbitration loop: integrates the nominal primitives, adds the mapped
//! operator corrections (`x = x_n + dy`), saturates, and drives the
//! simulated environment.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corrections::CorrectionFrame;
use crate::dmp::{renormalize_quaternion, switch_direction, Direction, DmpState, LearnedDmp, ReverseVelocity};
use crate::error::{Error, Result};
use crate::formats::{BehaviorBundle, ChannelKind, LearnedSegment, Schema};
use crate::input_mapping::{map_input_1dof, map_input_3dof, spatial_basis, SpatialBasis, SpatialContext};
use crate::override_law::{self, OverrideConfig, OverrideState};
use crate::policy::OperatorPolicy;
use crate::segmentation::SegmentKind;
use crate::sim_env::{removal_fraction, step_env, PaintField, Scenario, ToolState};

pub const LOG_FORMAT: &str = "csa-execution-log";
pub const LOG_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputMode {
    #[serde(rename = "1dof")]
    OneDof,
    #[serde(rename = "3dof")]
    ThreeDof,
}

impl InputMode {
    pub fn axes(self) -> usize {
        match self {
            InputMode::OneDof => 1,
            InputMode::ThreeDof => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::OneDof => "1dof",
            InputMode::ThreeDof => "3dof",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1dof" => Ok(InputMode::OneDof),
            "3dof" => Ok(InputMode::ThreeDof),
            other => Err(Error::Config(format!("unknown input mode `{other}` (expected 1dof or 3dof)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    /// Tick period (s).
    pub dt: f64,
    pub input_mode: InputMode,
    #[serde(rename = "override")]
    pub override_law: OverrideConfig,
    /// Time constant (s) of the filter on the applied correction; 0 applies
    /// the mapped correction directly.
    pub correction_filter: f64,
    /// Bounds on commanded normal force (N).
    pub force_limits: [f64; 2],
    /// Bounds on the factor applied to the primitive's time constant.
    pub rate_limits: [f64; 2],
    /// World directions used for 3-DOF mapping when the bundle has no surface.
    pub spatial: SpatialContext,
    pub reverse_velocity: ReverseVelocity,
    /// Keep the applied correction and override accumulator across segment
    /// boundaries (matching channels by name).
    pub carry_corrections: bool,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            dt: 0.01,
            input_mode: InputMode::OneDof,
            override_law: OverrideConfig::default(),
            correction_filter: 0.05,
            force_limits: [0.0, 40.0],
            rate_limits: [0.25, 4.0],
            spatial: SpatialContext::default(),
            reverse_velocity: ReverseVelocity::Negate,
            carry_corrections: false,
        }
    }
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.correction_filter >= 0.0) {
            return Err(Error::Config("correction_filter must be non-negative".into()));
        }
        let [f0, f1] = self.force_limits;
        if !(f0 <= f1) {
            return Err(Error::Config("force_limits must be ordered".into()));
        }
        let [r0, r1] = self.rate_limits;
        if !(r0 > 0.0 && r0 <= r1) {
            return Err(Error::Config("rate_limits must be positive and ordered".into()));
        }
        self.override_law.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    /// Halted by an environment fault; resumable.
    Paused,
    Completed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Running => "running",
            SessionStatus::Paused => "paused",
            SessionStatus::Completed => "completed",
        }
    }
}

/// Device displacement (normalized, one entry per input axis) and the state
/// of the reverse button.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorInput {
    pub d: Vec<f64>,
    #[serde(default)]
    pub reverse: bool,
}

impl OperatorInput {
    pub fn zero(mode: InputMode) -> Self {
        OperatorInput {
            d: vec![0.0; mode.axes()],
            reverse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvTelemetry {
    pub u: f64,
    pub v: f64,
    /// Mean density under the tool after this tick's removal.
    pub local_density: f64,
    /// Mean density over a tool-sized disc just behind the footprint along
    /// the direction of travel.
    pub wake_density: f64,
    pub removed: f64,
    pub removal_fraction: f64,
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcTelemetry {
    pub components: Vec<Vec<f64>>,
    pub scaled: Vec<Vec<f64>>,
    pub explained_fraction: Vec<f64>,
    /// Spatial direction per component (3-DOF mode only).
    pub spatial_basis: Option<SpatialBasis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub tick: u64,
    /// Simulated time after this tick (s).
    pub t: f64,
    pub status: SessionStatus,
    pub segment: usize,
    pub segment_kind: SegmentKind,
    pub direction: Direction,
    pub s: f64,
    /// Reference sample of the correction schedule in use.
    pub frame: usize,
    pub rate_scale: f64,
    pub input: OperatorInput,
    /// Effective input after the override law.
    pub u: Vec<f64>,
    /// Resistive device force.
    pub f: Vec<f64>,
    pub beyond_wall: Vec<bool>,
    pub x_n: Vec<f64>,
    pub dy: Vec<f64>,
    /// `x_n + dy` before saturation and renormalization.
    pub x_raw: Vec<f64>,
    pub x: Vec<f64>,
    pub saturated: Vec<bool>,
    /// The schedule frame has no variance to correct along.
    pub degenerate: bool,
    pub pcs: PcTelemetry,
    pub env: Option<EnvTelemetry>,
    pub collision: bool,
}

/// Paint field and its initial copy.
#[derive(Debug, Clone)]
pub struct SimEnv {
    pub scenario: Scenario,
    pub field: PaintField,
    pub initial: PaintField,
}

impl SimEnv {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let field = scenario.build_field()?;
        Ok(SimEnv {
            scenario,
            initial: field.clone(),
            field,
        })
    }

    pub fn removal_fraction(&self) -> f64 {
        removal_fraction(&self.field, &self.initial).expect("fields share a grid")
    }
}

struct ContactChannels {
    u: usize,
    v: usize,
    f_n: usize,
    v_tool: usize,
}

fn contact_channels(schema: &Schema) -> Option<ContactChannels> {
    Some(ContactChannels {
        u: schema.index_of("u")?,
        v: schema.index_of("v")?,
        f_n: schema.first_of_kind(ChannelKind::ForceNormal)?,
        v_tool: schema.first_of_kind(ChannelKind::ToolSpeed)?,
    })
}

/// One live execution of a bundle.
#[derive(Debug, Clone)]
pub struct Session {
    bundle: Arc<BehaviorBundle>,
    cfg: ExecutorConfig,
    env: Option<SimEnv>,
    segment: usize,
    direction: Direction,
    dmp: DmpState,
    override_state: OverrideState,
    dy: Vec<f64>,
    x: Vec<f64>,
    tick: u64,
    status: SessionStatus,
    last_uv: Option<(f64, f64)>,
    heading: (f64, f64),
}

impl Session {
    pub fn new(bundle: Arc<BehaviorBundle>, env: Option<SimEnv>, cfg: ExecutorConfig) -> Result<Self> {
        bundle.validate()?;
        cfg.validate()?;
        let first = &bundle.segments[0];
        let dmp = first.dmp.forward.initial_state();
        let m = first.schema.len();
        Ok(Session {
            x: dmp.x.clone(),
            dmp,
            dy: vec![0.0; m],
            override_state: OverrideState::new(cfg.input_mode.axes()),
            bundle,
            cfg,
            env,
            segment: 0,
            direction: Direction::Forward,
            tick: 0,
            status: SessionStatus::Running,
            last_uv: None,
            heading: (1.0, 0.0),
        })
    }

    pub fn bundle(&self) -> &Arc<BehaviorBundle> {
        &self.bundle
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.cfg
    }

    pub fn env(&self) -> Option<&SimEnv> {
        self.env.as_ref()
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn segment(&self) -> usize {
        self.segment
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn phase(&self) -> f64 {
        self.dmp.s
    }

    pub fn nominal(&self) -> &[f64] {
        &self.dmp.x
    }

    pub fn commanded(&self) -> &[f64] {
        &self.x
    }

    pub fn applied_correction(&self) -> &[f64] {
        &self.dy
    }

    /// Resumes a session paused by an environment fault.
    pub fn resume(&mut self) -> Result<()> {
        match self.status {
            SessionStatus::Paused => {
                self.status = SessionStatus::Running;
                Ok(())
            }
            SessionStatus::Running => Ok(()),
            SessionStatus::Completed => Err(Error::NotRunning("completed")),
        }
    }

    pub fn pause(&mut self) {
        if self.status == SessionStatus::Running {
            self.status = SessionStatus::Paused;
        }
    }

    fn current(&self) -> &LearnedSegment {
        &self.bundle.segments[self.segment]
    }

    fn active_dmp(&self) -> &LearnedDmp {
        self.current().dmp.get(self.direction)
    }

    /// Reference sample nearest to the current phase.
    fn frame_for_phase(&self) -> usize {
        let seg = self.current();
        let last = seg.len() - 1;
        let p = self.active_dmp().params.progress(self.dmp.s).clamp(0.0, 1.0);
        let k = (p * last as f64).round() as usize;
        match self.direction {
            Direction::Forward => k,
            Direction::Backward => last - k,
        }
    }

    fn context(&self) -> SpatialContext {
        let seg = self.current();
        if let (Some(surface), Some(ch)) = (&self.bundle.surface, contact_channels(&seg.schema)) {
            let u = self.x[ch.u].clamp(0.0, 1.0);
            let v = self.x[ch.v].clamp(0.0, 1.0);
            if let Ok(frame) = surface.frame(u, v) {
                let au = frame.axis_u();
                let av = frame.axis_v();
                let n = frame.normal();
                return SpatialContext {
                    axis_u: [au.x, au.y, au.z],
                    axis_v: [av.x, av.y, av.z],
                    force_dir: [-n.x, -n.y, -n.z],
                };
            }
        }
        self.cfg.spatial
    }

    fn exhausted(&self) -> bool {
        self.active_dmp().params.progress(self.dmp.s) >= 1.0
    }

    /// Moves to the neighbouring segment once the active primitive's phase
    /// is exhausted. Returns false when there is nowhere to go.
    fn advance_segment(&mut self) -> bool {
        let next = match self.direction {
            Direction::Forward if self.segment + 1 < self.bundle.segments.len() => self.segment + 1,
            Direction::Backward if self.segment > 0 => self.segment - 1,
            _ => return false,
        };
        let old_schema = self.current().schema.clone();
        let old_x = self.x.clone();
        let old_dy = std::mem::take(&mut self.dy);
        self.segment = next;
        let seg = &self.bundle.segments[next];
        let mut state = seg.dmp.get(self.direction).initial_state();
        let mut dy = vec![0.0; seg.schema.len()];
        for (i, ch) in seg.schema.channels.iter().enumerate() {
            if let Some(j) = old_schema.index_of(&ch.name) {
                if self.cfg.carry_corrections {
                    dy[i] = old_dy[j];
                    state.x[i] = old_x[j] - old_dy[j];
                } else {
                    state.x[i] = old_x[j];
                }
            }
        }
        if !self.cfg.carry_corrections {
            self.override_state.reset();
        }
        self.dmp = state;
        self.dy = dy;
        true
    }

    /// Advances the session by one tick.
    pub fn tick(&mut self, input: &OperatorInput) -> Result<TelemetryFrame> {
        if self.status != SessionStatus::Running {
            return Err(Error::NotRunning(self.status.as_str()));
        }
        let axes = self.cfg.input_mode.axes();
        if input.d.len() != axes || input.d.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config(format!(
                "expected {axes} finite input axes, got {:?}",
                input.d
            )));
        }
        let dt = self.cfg.dt;
        let d: Vec<f64> = input.d.iter().map(|d| d.clamp(-1.0, 1.0)).collect();
        if self.exhausted() {
            self.advance_segment();
        }

        // (1) input law
        let ov = override_law::update(&mut self.override_state, &d, dt, &self.cfg.override_law);
        let wall = self.cfg.override_law.d_wall;

        // (2) mapping onto the current frame
        let frame_idx = self.frame_for_phase();
        let (target, basis) = {
            let seg = self.current();
            let frame: &CorrectionFrame = &seg.schedule.frames[frame_idx];
            match self.cfg.input_mode {
                InputMode::OneDof => (map_input_1dof(ov.u[0] / wall, frame), None),
                InputMode::ThreeDof => {
                    let basis = spatial_basis(frame, &seg.schema, &self.context(), axes);
                    let u = [ov.u[0] / wall, ov.u[1] / wall, ov.u[2] / wall];
                    (map_input_3dof(&u, &basis, frame), Some(basis))
                }
            }
        };

        // (3) applied-correction filter
        if self.cfg.correction_filter > 0.0 {
            let alpha = 1.0 - (-dt / self.cfg.correction_filter).exp();
            for (y, t) in self.dy.iter_mut().zip(&target) {
                *y += alpha * (t - *y);
            }
        } else {
            self.dy.clone_from(&target);
        }

        // (4) direction
        let wanted = if input.reverse { Direction::Backward } else { Direction::Forward };
        if wanted != self.direction {
            let params = self.active_dmp().params;
            switch_direction(&mut self.dmp, &params, self.cfg.reverse_velocity);
            self.direction = wanted;
        }

        // (5) nominal step, rate from the corrected execution-rate channel
        let [r_lo, r_hi] = self.cfg.rate_limits;
        let rate_idx = self.current().schema.first_of_kind(ChannelKind::ExecutionRate);
        let rate_scale = match rate_idx {
            Some(i) => rate_factor(self.dmp.x[i], self.dy[i], r_lo, r_hi),
            None => 1.0,
        };
        let bundle = Arc::clone(&self.bundle);
        bundle.segments[self.segment]
            .dmp
            .get(self.direction)
            .step(&mut self.dmp, dt, rate_scale);
        let completed = self.direction == Direction::Forward
            && self.segment + 1 == self.bundle.segments.len()
            && self.exhausted();

        // (6) arbitration and saturation
        let schema = self.current().schema.clone();
        let x_raw: Vec<f64> = self.dmp.x.iter().zip(&self.dy).map(|(n, y)| n + y).collect();
        let mut x = x_raw.clone();
        let mut saturated = vec![false; x.len()];
        let [f_lo, f_hi] = self.cfg.force_limits;
        for (i, ch) in schema.channels.iter().enumerate() {
            let (lo, hi) = match ch.kind {
                ChannelKind::ForceNormal => (f_lo, f_hi),
                ChannelKind::SurfaceCoordinate => (0.0, 1.0),
                ChannelKind::ExecutionRate => {
                    let nominal = self.dmp.x[i];
                    if nominal > 0.0 {
                        (nominal / r_hi, nominal / r_lo)
                    } else {
                        continue;
                    }
                }
                _ => continue,
            };
            let c = x[i].clamp(lo, hi);
            if c != x[i] {
                saturated[i] = true;
                x[i] = c;
            }
        }
        if !schema.quaternion_groups().is_empty() {
            renormalize_quaternion(&mut x, &schema)?;
        }
        self.x = x;

        // (7) environment
        let env = self.step_environment(&schema);
        let collision = env.as_ref().is_some_and(|e| e.collision);

        self.tick += 1;
        if completed {
            self.status = SessionStatus::Completed;
        } else if collision {
            self.status = SessionStatus::Paused;
        }

        // (8) telemetry
        let seg = self.current();
        let frame = &seg.schedule.frames[frame_idx];
        let k = axes.min(frame.scaled.len());
        Ok(TelemetryFrame {
            tick: self.tick,
            t: self.tick as f64 * dt,
            status: self.status,
            segment: self.segment,
            segment_kind: seg.kind,
            direction: self.direction,
            s: self.dmp.s,
            frame: frame_idx,
            rate_scale,
            input: input.clone(),
            u: ov.u,
            f: ov.force,
            beyond_wall: ov.beyond_wall,
            x_n: self.dmp.x.clone(),
            dy: self.dy.clone(),
            x_raw,
            x: self.x.clone(),
            saturated,
            degenerate: frame.degenerate,
            pcs: PcTelemetry {
                components: frame.components[..k].to_vec(),
                scaled: frame.scaled[..k].to_vec(),
                explained_fraction: frame.explained_fraction[..k].to_vec(),
                spatial_basis: basis,
            },
            env,
            collision,
        })
    }

    fn step_environment(&mut self, schema: &Schema) -> Option<EnvTelemetry> {
        let env = self.env.as_mut()?;
        let Some(ch) = contact_channels(schema) else {
            self.last_uv = None;
            return None;
        };
        let x = &self.x;
        let tool = ToolState {
            u: x[ch.u],
            v: x[ch.v],
            f_n: x[ch.f_n],
            v_tool: x[ch.v_tool],
        };
        let r = env.scenario.tool_radius;
        let ev = step_env(&mut env.field, &tool, self.cfg.dt, r, &env.scenario.removal);
        if let Some((u0, v0)) = self.last_uv {
            let (du, dv) = (tool.u - u0, tool.v - v0);
            let norm = (du * du + dv * dv).sqrt();
            if norm > 1e-12 {
                self.heading = (du / norm, dv / norm);
            }
        }
        self.last_uv = Some((tool.u, tool.v));
        let (hu, hv) = self.heading;
        let wake_density = env.field.mean_density_in_disc(tool.u - 2.0 * r * hu, tool.v - 2.0 * r * hv, r);
        Some(EnvTelemetry {
            u: tool.u,
            v: tool.v,
            local_density: ev.local_density,
            wake_density,
            removed: ev.removed,
            removal_fraction: env.removal_fraction(),
            collision: ev.collision,
        })
    }
}

/// Factor applied to the primitive's time constant when the execution rate
/// channel is commanded to `nominal + correction`.
fn rate_factor(nominal: f64, correction: f64, lo: f64, hi: f64) -> f64 {
    let commanded = nominal + correction;
    if nominal <= 0.0 {
        return 1.0;
    }
    if commanded <= 0.0 {
        return hi;
    }
    (nominal / commanded).clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: String,
    pub bundle_digest: String,
    pub scenario: Option<Scenario>,
    pub config: ExecutorConfig,
    pub policy: String,
}

/// One tick of an execution log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub tick: u64,
    pub input: OperatorInput,
    pub segment: usize,
    pub direction: Direction,
    pub s: f64,
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    pub x_n: Vec<f64>,
    pub dy: Vec<f64>,
    pub x: Vec<f64>,
    pub saturated: Vec<bool>,
    pub env: Option<EnvTelemetry>,
}

impl From<&TelemetryFrame> for LogRecord {
    fn from(t: &TelemetryFrame) -> Self {
        LogRecord {
            tick: t.tick,
            input: t.input.clone(),
            segment: t.segment,
            direction: t.direction,
            s: t.s,
            u: t.u.clone(),
            f: t.f.clone(),
            x_n: t.x_n.clone(),
            dy: t.dy.clone(),
            x: t.x.clone(),
            saturated: t.saturated.clone(),
            env: t.env.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl ExecutionLog {
    pub fn new(bundle: &BehaviorBundle, scenario: Option<&Scenario>, config: &ExecutorConfig, policy: &str) -> Self {
        ExecutionLog {
            header: LogHeader {
                format: LOG_FORMAT.into(),
                version: LOG_VERSION.into(),
                bundle_digest: bundle.digest(),
                scenario: scenario.cloned(),
                config: config.clone(),
                policy: policy.into(),
            },
            records: Vec::new(),
        }
    }

    /// JSON lines: the header, then one record per tick.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            line: line + 1,
            msg: e.to_string(),
        };
        let (n, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty execution log".into(),
        })?;
        let first = first.map_err(|e| Error::io("<log>", e))?;
        let header: LogHeader = serde_json::from_str(&first).map_err(|e| parse_err(n, e))?;
        if header.format != LOG_FORMAT {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected format `{LOG_FORMAT}`, got `{}`", header.format),
            });
        }
        crate::sim_env::check_major("execution log", &header.version, LOG_VERSION)?;
        let mut records = Vec::new();
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io("<log>", e))?;
            records.push(serde_json::from_str(&line).map_err(|e| parse_err(n, e))?);
        }
        Ok(ExecutionLog { header, records })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone)]
pub struct HeadlessRun {
    pub log: ExecutionLog,
    pub status: SessionStatus,
    pub removal_fraction: Option<f64>,
    pub ticks: u64,
}

/// Runs a session to completion (or until `max_duration` seconds of
/// simulated time, or a fault) with inputs chosen by `policy`.
pub fn run_headless(
    bundle: Arc<BehaviorBundle>,
    scenario: Option<&Scenario>,
    policy: &mut dyn OperatorPolicy,
    cfg: &ExecutorConfig,
    max_duration: f64,
) -> Result<HeadlessRun> {
    let env = scenario.cloned().map(SimEnv::new).transpose()?;
    let mut session = Session::new(bundle.clone(), env, cfg.clone())?;
    let mut log = ExecutionLog::new(&bundle, scenario, cfg, policy.name());
    let max_ticks = (max_duration / cfg.dt).ceil() as u64;
    policy.reset(cfg.input_mode);
    let mut last: Option<TelemetryFrame> = None;
    while session.status() == SessionStatus::Running && session.tick_count() < max_ticks {
        let input = policy.act(last.as_ref());
        let frame = session.tick(&input)?;
        log.records.push(LogRecord::from(&frame));
        last = Some(frame);
    }
    Ok(HeadlessRun {
        log,
        status: session.status(),
        removal_fraction: session.env().map(SimEnv::removal_fraction),
        ticks: session.tick_count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub ticks: usize,
    pub final_status: SessionStatus,
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Re-executes the logged inputs against `bundle` and checks that every
/// logged record is reproduced bit for bit.
pub fn replay(bundle: Arc<BehaviorBundle>, log: &ExecutionLog) -> Result<ReplayReport> {
    let digest = bundle.digest();
    if digest != log.header.bundle_digest {
        return Err(Error::ReplayMismatch {
            tick: 0,
            detail: format!("log was recorded against bundle {}, got {digest}", log.header.bundle_digest),
        });
    }
    let env = log.header.scenario.clone().map(SimEnv::new).transpose()?;
    let mut session = Session::new(bundle, env, log.header.config.clone())?;
    for (i, rec) in log.records.iter().enumerate() {
        let expected_tick = i as u64 + 1;
        if rec.tick != expected_tick {
            return Err(Error::ReplayMismatch {
                tick: rec.tick,
                detail: format!("expected tick {expected_tick}"),
            });
        }
        let frame = session.tick(&rec.input).map_err(|e| Error::ReplayMismatch {
            tick: rec.tick,
            detail: format!("tick failed: {e}"),
        })?;
        let fresh = LogRecord::from(&frame);
        let mismatch = |field: &str| Error::ReplayMismatch {
            tick: rec.tick,
            detail: format!("`{field}` differs"),
        };
        if !same_bits(&fresh.x, &rec.x) {
            return Err(mismatch("x"));
        }
        if !same_bits(&fresh.x_n, &rec.x_n) {
            return Err(mismatch("x_n"));
        }
        if !same_bits(&fresh.dy, &rec.dy) {
            return Err(mismatch("dy"));
        }
        if !same_bits(&fresh.u, &rec.u) || !same_bits(&fresh.f, &rec.f) {
            return Err(mismatch("override"));
        }
        if fresh.s.to_bits() != rec.s.to_bits() || fresh.segment != rec.segment || fresh.direction != rec.direction {
            return Err(mismatch("phase"));
        }
        if fresh != *rec {
            return Err(mismatch("record"));
        }
        if session.status() == SessionStatus::Paused && i + 1 < log.records.len() {
            session.resume()?;
        }
    }
    Ok(ReplayReport {
        ticks: log.records.len(),
        final_status: session.status(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo_synth::{generate, PlantedComponent, SynthSpec};
    use crate::pipeline::{learn, LearnConfig};
    use crate::policy::{ConstantPolicy, NullPolicy, ScriptedInputs};
    use crate::sim_env::{Obstacle, PaintPatch, PaintSpec, RemovalParams, SCENARIO_FORMAT, SCENARIO_VERSION};
    use std::sync::OnceLock;

    fn bundle() -> Arc<BehaviorBundle> {
        static B: OnceLock<Arc<BehaviorBundle>> = OnceLock::new();
        B.get_or_init(|| {
            let (set, truth) = generate(&SynthSpec::single_coordination(2)).unwrap();
            Arc::new(learn(&set, Some(&truth.surface), &LearnConfig::default()).unwrap())
        })
        .clone()
    }

    fn force_only_bundle() -> Arc<BehaviorBundle> {
        let mut spec = SynthSpec::single_coordination(8);
        spec.components = vec![PlantedComponent {
            direction: [("f_n".to_string(), 1.0)].into_iter().collect(),
            amplitude: 0.1,
        }];
        let (set, truth) = generate(&spec).unwrap();
        Arc::new(learn(&set, Some(&truth.surface), &LearnConfig::default()).unwrap())
    }

    fn scenario(obstacles: Vec<Obstacle>) -> Scenario {
        Scenario {
            format: SCENARIO_FORMAT.into(),
            version: SCENARIO_VERSION.into(),
            name: "unit".into(),
            seed: 1,
            grid: [100, 100],
            tool_radius: 0.05,
            removal: RemovalParams::default(),
            paint: PaintSpec {
                base_density: 0.0,
                patches: vec![PaintPatch {
                    u: 0.5,
                    v: 0.5,
                    radius: 0.02,
                    density: 1.0,
                }],
                random: None,
            },
            obstacles,
        }
    }

    /// Norm of the part of `y` outside the span of `basis` (least squares
    /// through the normal equations).
    fn span_residual(y: &[f64], basis: &[Vec<f64>]) -> f64 {
        use nalgebra::{DMatrix, DVector};
        let a = DMatrix::from_fn(y.len(), basis.len(), |i, j| basis[j][i]);
        let y = DVector::from_column_slice(y);
        let svd = a.clone().svd(true, true);
        let coef = svd.solve(&y, 1e-12).unwrap();
        (y - a * coef).norm()
    }

    fn run(policy: &mut dyn OperatorPolicy, cfg: &ExecutorConfig) -> HeadlessRun {
        run_headless(bundle(), Some(&scenario(vec![])), policy, cfg, 30.0).unwrap()
    }

    #[test]
    fn zero_input_follows_the_pure_rollout() {
        let b = bundle();
        let out = run(&mut NullPolicy::default(), &ExecutorConfig::default());
        assert_eq!(out.status, SessionStatus::Completed);
        let dmp = &b.segments[0].dmp.forward;
        let mut state = dmp.initial_state();
        for rec in out.log.records.iter().take_while(|r| r.segment == 0) {
            dmp.step(&mut state, 0.01, 1.0);
            assert_eq!(rec.x_n, state.x);
            assert!(rec.dy.iter().all(|&y| y == 0.0));
        }
        for rec in &out.log.records {
            let mut expect: Vec<f64> = rec.x_n.clone();
            let schema = &b.segments[rec.segment].schema;
            if !schema.quaternion_groups().is_empty() {
                renormalize_quaternion(&mut expect, schema).unwrap();
            }
            assert_eq!(rec.x, expect, "tick {}", rec.tick);
        }
    }

    #[test]
    fn held_input_settles_to_the_scaled_force_offset() {
        let b = force_only_bundle();
        let cfg = ExecutorConfig::default();
        let d_wall = cfg.override_law.d_wall;
        let mut policy = ConstantPolicy {
            d: vec![d_wall],
            reverse: false,
        };
        let mut session = Session::new(b.clone(), None, cfg).unwrap();
        let mut checked = 0;
        let mut in_contact = 0;
        while session.status() == SessionStatus::Running {
            let t = session.tick(&policy.act(None)).unwrap();
            if t.segment_kind != SegmentKind::InContact {
                in_contact = 0;
                continue;
            }
            in_contact += 1;
            // ten filter time constants after entering contact
            if in_contact > 50 {
                let seg = &b.segments[t.segment];
                let f = seg.schema.first_of_kind(ChannelKind::ForceNormal).unwrap();
                let scaled = seg.schedule.frames[t.frame].scaled[0][f];
                assert!(scaled > 1.0);
                assert!((t.x[f] - t.x_n[f] - scaled).abs() < 1e-3 * scaled, "{} vs {scaled}", t.x[f] - t.x_n[f]);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn reverse_then_forward_restores_the_phase() {
        let mut session = Session::new(bundle(), None, ExecutorConfig::default()).unwrap();
        let fwd = OperatorInput::zero(InputMode::OneDof);
        let back = OperatorInput { reverse: true, ..fwd.clone() };
        let mut phases = Vec::new();
        for _ in 0..60 {
            phases.push(session.tick(&fwd).unwrap().s);
        }
        let k = 25;
        for _ in 0..k {
            assert_eq!(session.tick(&back).unwrap().direction, Direction::Backward);
        }
        // The next forward tick resumes where the phase stood k ticks
        // before the press, then advances by one.
        let resumed = session.tick(&fwd).unwrap().s;
        let expected = phases[phases.len() - 1 - k + 1];
        assert!((resumed - expected).abs() < 1e-12, "{resumed} vs {expected}");
    }

    #[test]
    fn reverse_across_a_boundary_enters_the_previous_backward_primitive() {
        let b = bundle();
        let mut session = Session::new(b.clone(), None, ExecutorConfig::default()).unwrap();
        let fwd = OperatorInput::zero(InputMode::OneDof);
        while session.segment() == 0 {
            session.tick(&fwd).unwrap();
        }
        for _ in 0..20 {
            session.tick(&fwd).unwrap();
        }
        let back = OperatorInput { reverse: true, ..fwd };
        let mut saw = false;
        for _ in 0..200 {
            let t = session.tick(&back).unwrap();
            if t.segment == 0 {
                saw = true;
                assert_eq!(t.direction, Direction::Backward);
            }
        }
        assert!(saw);
        // ends up back at the start of the task
        let start = &b.segments[0].dmp.forward.start;
        let x = session.nominal();
        for (i, (a, s)) in x.iter().zip(start).enumerate() {
            assert!((a - s).abs() < 0.05 * b.segments[0].schema.channels[i].normalization_range);
        }
    }

    #[test]
    fn saturation_bounds_hold_under_full_override() {
        let mut cfg = ExecutorConfig::default();
        cfg.override_law.gamma = 50.0;
        let out = run(&mut ConstantPolicy { d: vec![1.0], reverse: false }, &cfg);
        let b = bundle();
        let mut clamped = 0;
        for rec in &out.log.records {
            let schema = &b.segments[rec.segment].schema;
            for (i, ch) in schema.channels.iter().enumerate() {
                match ch.kind {
                    ChannelKind::ForceNormal => {
                        assert!((0.0..=40.0).contains(&rec.x[i]));
                        clamped += rec.saturated[i] as usize;
                    }
                    ChannelKind::ExecutionRate => {
                        let r = rec.x_n[i] / rec.x[i];
                        assert!((0.25 - 1e-12..=4.0 + 1e-12).contains(&r));
                    }
                    ChannelKind::SurfaceCoordinate => assert!((0.0..=1.0).contains(&rec.x[i])),
                    _ => {}
                }
            }
            for q in schema.quaternion_groups() {
                let n: f64 = rec.x[q..q + 4].iter().map(|c| c * c).sum();
                assert!((n.sqrt() - 1.0).abs() < 1e-12);
            }
        }
        assert!(clamped > 0, "override never reached the force limit");
    }

    #[test]
    fn arbitration_identity_and_subspace() {
        let b = bundle();
        for mode in [InputMode::OneDof, InputMode::ThreeDof] {
            let cfg = ExecutorConfig {
                input_mode: mode,
                correction_filter: 0.0,
                ..ExecutorConfig::default()
            };
            let mut session = Session::new(b.clone(), None, cfg).unwrap();
            let mut i = 0u32;
            while session.status() == SessionStatus::Running {
                i += 1;
                let w = f64::from(i) * 0.013;
                let d = [0.5 * w.sin(), 0.4 * (1.7 * w).cos(), 0.3 * (0.6 * w).sin()];
                let t = session
                    .tick(&OperatorInput {
                        d: d[..mode.axes()].to_vec(),
                        reverse: false,
                    })
                    .unwrap();
                for j in 0..t.x_raw.len() {
                    assert_eq!(t.x_raw[j], t.x_n[j] + t.dy[j]);
                }
                let frame = &b.segments[t.segment].schedule.frames[t.frame];
                assert!(span_residual(&t.dy, &frame.scaled[..mode.axes()]) < 1e-9);
            }
        }
    }

    #[test]
    fn collision_pauses_the_session() {
        let wall = Obstacle {
            polygon: vec![[0.6, 0.0], [0.7, 0.0], [0.7, 1.0], [0.6, 1.0]],
        };
        let sc = scenario(vec![wall]);
        let out = run_headless(bundle(), Some(&sc), &mut NullPolicy::default(), &ExecutorConfig::default(), 30.0).unwrap();
        assert_eq!(out.status, SessionStatus::Paused);
        let last = out.log.records.last().unwrap();
        assert!(last.env.as_ref().unwrap().collision);
        let u = last.env.as_ref().unwrap().u;
        assert!((0.55 - 1e-9..0.6).contains(&u), "{u}");
    }

    #[test]
    fn paused_session_rejects_ticks_until_resumed() {
        let mut s = Session::new(bundle(), None, ExecutorConfig::default()).unwrap();
        s.pause();
        let zero = OperatorInput::zero(InputMode::OneDof);
        assert!(matches!(s.tick(&zero), Err(Error::NotRunning("paused"))));
        s.resume().unwrap();
        s.tick(&zero).unwrap();
        assert!(s.tick(&OperatorInput { d: vec![0.0, 0.0], reverse: false }).is_err());
    }

    #[test]
    fn logs_are_deterministic_and_replay_bit_exactly() {
        let inputs: Vec<OperatorInput> = (0..900)
            .map(|i| OperatorInput {
                d: vec![(i as f64 * 0.021).sin()],
                reverse: (300..340).contains(&i),
            })
            .collect();
        let cfg = ExecutorConfig::default();
        let a = run(&mut ScriptedInputs::new(inputs.clone()), &cfg);
        let b = run(&mut ScriptedInputs::new(inputs), &cfg);
        assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());

        let parsed = ExecutionLog::parse(&a.log.to_jsonl()).unwrap();
        assert_eq!(parsed, a.log);
        let report = replay(bundle(), &parsed).unwrap();
        assert_eq!(report.ticks, a.log.records.len());

        let mut tampered = parsed.clone();
        let rec = &mut tampered.records[400];
        rec.x[0] = f64::from_bits(rec.x[0].to_bits() + 1);
        assert!(matches!(replay(bundle(), &tampered), Err(Error::ReplayMismatch { tick: 401, .. })));

        let mut other = parsed;
        other.header.bundle_digest = "00".into();
        assert!(matches!(replay(bundle(), &other), Err(Error::ReplayMismatch { tick: 0, .. })));
    }

    #[test]
    fn log_header_is_checked() {
        let log = run(&mut NullPolicy::default(), &ExecutorConfig::default()).log;
        let text = log.to_jsonl();
        let bad = text.replacen(LOG_VERSION, "9.0.0", 1);
        assert!(matches!(ExecutionLog::parse(&bad), Err(Error::Version { .. })));
        assert!(ExecutionLog::parse("").is_err());
        let truncated = &text[..text.len() - 10];
        assert!(matches!(ExecutionLog::parse(truncated), Err(Error::Parse { .. })));
    }
}
