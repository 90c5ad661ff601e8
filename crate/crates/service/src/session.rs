//! One live session: the executor, its lifecycle, the input latch and the
//! telemetry fan-out.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use csa_core::executor::{
    ExecutionLog, ExecutorConfig, InputMode, LogRecord, OperatorInput, Session, SessionStatus, SimEnv, TelemetryFrame,
};
use tokio::sync::{broadcast, Notify};
use tokio::time::MissedTickBehavior;

use crate::error::ServiceError;
use crate::protocol::{AckOutcome, ControlAction, Lifecycle, SegmentInfo, ServerMessage, SessionSummary, PROTOCOL_VERSION};
use crate::registry::{BundleEntry, ScenarioEntry};

/// A serialized server message. Telemetry carries its tick so resumed
/// streams can skip frames they already replayed.
#[derive(Debug, Clone)]
pub struct Outgoing {
    pub tick: Option<u64>,
    pub text: Arc<str>,
}

#[derive(Debug, Clone, Copy)]
pub struct SessionLimits {
    /// Telemetry frames kept for clients resuming by tick index.
    pub history: usize,
    /// Messages buffered per client before the oldest are dropped.
    pub channel_capacity: usize,
}

impl Default for SessionLimits {
    fn default() -> Self {
        SessionLimits {
            history: 6000,
            channel_capacity: 1024,
        }
    }
}

struct Inner {
    exec: Session,
    state: Lifecycle,
    reason: Option<String>,
    log: ExecutionLog,
}

struct Latch {
    input: OperatorInput,
    client_time: Option<f64>,
    controller: Option<u64>,
}

pub struct SessionRuntime {
    pub id: String,
    pub bundle: Arc<BundleEntry>,
    pub scenario: Option<Arc<ScenarioEntry>>,
    pub mode: InputMode,
    pub warnings: Vec<String>,
    epoch: Instant,
    inner: Mutex<Inner>,
    latch: Mutex<Latch>,
    history: Mutex<VecDeque<Outgoing>>,
    limits: SessionLimits,
    tx: broadcast::Sender<Outgoing>,
    wake: Notify,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Warnings about a bundle whose recommended number of correction axes does
/// not suit the chosen input device.
pub fn mode_warnings(recommended_k: usize, mode: InputMode) -> Vec<String> {
    match mode {
        InputMode::OneDof if recommended_k > 1 => vec![format!(
            "bundle recommends {recommended_k} correction axes but 1dof input drives only the first principal component"
        )],
        InputMode::ThreeDof if recommended_k == 1 => vec![
            "bundle recommends a single correction axis; the second and third 3dof axes drive low-variance components"
                .to_string(),
        ],
        _ => Vec::new(),
    }
}

impl SessionRuntime {
    pub fn new(
        id: String,
        bundle: Arc<BundleEntry>,
        scenario: Option<Arc<ScenarioEntry>>,
        cfg: ExecutorConfig,
        limits: SessionLimits,
    ) -> Result<Self, ServiceError> {
        let env = scenario.as_ref().map(|s| SimEnv::new(s.scenario.clone())).transpose()?;
        let exec = Session::new(bundle.bundle.clone(), env, cfg.clone())?;
        let log = ExecutionLog::new(&bundle.bundle, scenario.as_ref().map(|s| &s.scenario), &cfg, "service");
        let mode = cfg.input_mode;
        let (tx, _) = broadcast::channel(limits.channel_capacity.max(1));
        Ok(SessionRuntime {
            id,
            warnings: mode_warnings(bundle.bundle.recommended_k, mode),
            bundle,
            scenario,
            mode,
            epoch: Instant::now(),
            inner: Mutex::new(Inner {
                exec,
                state: Lifecycle::Created,
                reason: None,
                log,
            }),
            latch: Mutex::new(Latch {
                input: OperatorInput::zero(mode),
                client_time: None,
                controller: None,
            }),
            history: Mutex::new(VecDeque::new()),
            limits,
            tx,
            wake: Notify::new(),
        })
    }

    fn summary_of(&self, inner: &Inner) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            bundle_id: self.bundle.id.clone(),
            scenario_id: self.scenario.as_ref().map(|s| s.id.clone()),
            input_mode: self.mode,
            state: inner.state,
            reason: inner.reason.clone(),
            tick: inner.exec.tick_count(),
            warnings: self.warnings.clone(),
            removal_fraction: inner.exec.env().map(SimEnv::removal_fraction),
        }
    }

    pub fn summary(&self) -> SessionSummary {
        self.summary_of(&lock(&self.inner))
    }

    pub fn state(&self) -> Lifecycle {
        lock(&self.inner).state
    }

    pub fn hello(&self, client_id: u64) -> ServerMessage {
        let inner = lock(&self.inner);
        let bundle = &self.bundle.bundle;
        ServerMessage::Hello {
            protocol_version: PROTOCOL_VERSION.into(),
            client_id,
            session: self.summary_of(&inner),
            config: inner.exec.config().clone(),
            segments: bundle
                .segments
                .iter()
                .map(|s| SegmentInfo {
                    kind: s.kind,
                    start: s.start,
                    end: s.end,
                    schema: s.schema.clone(),
                    recommended_k: s.k_report.recommended,
                })
                .collect(),
        }
    }

    fn publish(&self, msg: &ServerMessage, tick: Option<u64>) {
        let text: Arc<str> = serde_json::to_string(msg).expect("messages serialize").into();
        let out = Outgoing { tick, text };
        // History and broadcast move together so a subscriber that snapshots
        // the history under this lock sees every frame exactly once.
        let mut history = lock(&self.history);
        if tick.is_some() {
            if history.len() == self.limits.history {
                history.pop_front();
            }
            history.push_back(out.clone());
        }
        // no receivers is fine
        let _ = self.tx.send(out);
    }

    fn set_state(&self, inner: &mut Inner, state: Lifecycle, reason: Option<String>) {
        inner.state = state;
        inner.reason = reason;
        let msg = ServerMessage::Status {
            session: self.summary_of(inner),
        };
        self.publish(&msg, None);
        self.wake.notify_one();
    }

    /// Applies a lifecycle action, returning the new state.
    pub fn control(&self, action: ControlAction) -> Result<Lifecycle, ServiceError> {
        let mut inner = lock(&self.inner);
        let from = inner.state;
        let invalid = || ServiceError::InvalidState {
            action: format!("{action:?}").to_lowercase(),
            state: from,
        };
        match (action, from) {
            (ControlAction::Start, Lifecycle::Created) => self.set_state(&mut inner, Lifecycle::Running, None),
            (ControlAction::Pause, Lifecycle::Running) => {
                self.set_state(&mut inner, Lifecycle::Paused, Some("paused by client".into()))
            }
            (ControlAction::Resume, Lifecycle::Paused) => {
                if inner.exec.status() == SessionStatus::Paused {
                    inner.exec.resume()?;
                }
                self.set_state(&mut inner, Lifecycle::Running, None)
            }
            (ControlAction::Abort, s) if !s.is_terminal() => {
                self.set_state(&mut inner, Lifecycle::Faulted, Some("aborted by client".into()))
            }
            _ => return Err(invalid()),
        }
        Ok(inner.state)
    }

    /// Latches an input from `client` (latest wins). The first client to send
    /// input controls the session until it disconnects.
    pub fn submit_input(
        &self,
        client: u64,
        d: Vec<f64>,
        reverse: bool,
        client_time: f64,
    ) -> Result<AckOutcome, ServiceError> {
        let state = self.state();
        if state != Lifecycle::Running {
            return Err(ServiceError::NotRunning(state));
        }
        if d.len() != self.mode.axes() {
            return Err(ServiceError::InvalidInput(format!(
                "{} input needs {} axes, got {}",
                self.mode.as_str(),
                self.mode.axes(),
                d.len()
            )));
        }
        if d.iter().any(|x| !x.is_finite() || x.abs() > 1.0) {
            return Err(ServiceError::InvalidInput("displacements must lie in [-1, 1]".into()));
        }
        if !client_time.is_finite() {
            return Err(ServiceError::InvalidInput("client_time must be finite".into()));
        }
        let mut latch = lock(&self.latch);
        match latch.controller {
            Some(owner) if owner != client => return Err(ServiceError::NotController),
            Some(_) => {}
            None => {
                latch.controller = Some(client);
                latch.client_time = None;
            }
        }
        if latch.client_time.is_some_and(|t| client_time < t) {
            return Ok(AckOutcome::Stale);
        }
        latch.input = OperatorInput { d, reverse };
        latch.client_time = Some(client_time);
        Ok(AckOutcome::Latched)
    }

    /// Gives up control if `client` holds it. The device is considered
    /// released, so the latched input returns to zero.
    pub fn release(&self, client: u64) {
        let mut latch = lock(&self.latch);
        if latch.controller == Some(client) {
            latch.controller = None;
            latch.input = OperatorInput::zero(self.mode);
        }
    }

    pub fn controller(&self) -> Option<u64> {
        lock(&self.latch).controller
    }

    /// Runs one executor tick if the session is running.
    pub fn step(&self) -> Option<TelemetryFrame> {
        let mut inner = lock(&self.inner);
        if inner.state != Lifecycle::Running {
            return None;
        }
        let (input, client_time) = {
            let latch = lock(&self.latch);
            (latch.input.clone(), latch.client_time)
        };
        let frame = match inner.exec.tick(&input) {
            Ok(frame) => frame,
            Err(e) => {
                self.set_state(&mut inner, Lifecycle::Faulted, Some(e.to_string()));
                return None;
            }
        };
        inner.log.records.push(LogRecord::from(&frame));
        let msg = ServerMessage::Telemetry {
            session: self.id.clone(),
            server_time: self.epoch.elapsed().as_secs_f64(),
            input_client_time: client_time,
            frame: Box::new(frame.clone()),
        };
        self.publish(&msg, Some(frame.tick));
        match frame.status {
            SessionStatus::Running => {}
            SessionStatus::Paused => {
                let why = if frame.collision { "collision" } else { "paused by executor" };
                self.set_state(&mut inner, Lifecycle::Paused, Some(why.into()));
            }
            SessionStatus::Completed => self.set_state(&mut inner, Lifecycle::Completed, None),
        }
        Some(frame)
    }

    /// Paces [`step`](Self::step) at the executor tick rate until the session
    /// completes or faults.
    pub async fn run(self: Arc<Self>) {
        let dt = lock(&self.inner).exec.config().dt;
        let mut interval = tokio::time::interval(Duration::from_secs_f64(dt));
        interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
        loop {
            let notified = self.wake.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            match self.state() {
                Lifecycle::Running => {
                    interval.tick().await;
                    self.step();
                }
                Lifecycle::Created | Lifecycle::Paused => {
                    notified.await;
                    // restart the cadence instead of bursting through the
                    // ticks missed while paused
                    interval.reset();
                }
                Lifecycle::Completed | Lifecycle::Faulted => break,
            }
        }
        tracing::debug!(session = %self.id, "tick loop finished");
    }

    /// A receiver for live messages plus the retained telemetry from
    /// `from_tick` on. Live telemetry at or before the last replayed tick
    /// should be skipped.
    pub fn subscribe(&self, from_tick: Option<u64>) -> (Vec<Outgoing>, broadcast::Receiver<Outgoing>) {
        let history = lock(&self.history);
        let rx = self.tx.subscribe();
        let backlog = match from_tick {
            Some(from) => history
                .iter()
                .filter(|o| o.tick.is_some_and(|t| t >= from))
                .cloned()
                .collect(),
            None => Vec::new(),
        };
        (backlog, rx)
    }

    pub fn log(&self) -> ExecutionLog {
        lock(&self.inner).log.clone()
    }
}
